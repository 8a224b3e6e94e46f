"""Mortality-linked bond pricing under mixed fractional Brownian motion.

Modules: ``fracnoise`` (noise sampling), ``model`` (short rate and excess
mortality), ``pricing`` (bonds and payouts), ``estimate`` (physical-measure
fitting), ``calibrate`` (pricing-measure calibration), ``data`` (STMF/FRED
ingestion) and ``cli``.
"""

__version__ = "0.1.0"
