"""Exact samplers and covariance kernels for fBm, fGn and mixed fBm.

Paths are generated in fixed-size blocks.  Every block draws from its own
Philox stream keyed by ``(seed, component, block index)`` and rows are drawn
in order, so path ``i`` depends on the seed only.  It does not change with
``n_paths`` or with how many workers produce the blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import toeplitz

BLOCK_SIZE = 1024
NEG_EIG_TOL = 1e-8
CHOL_TOL = 1e-10

# component tags for substream derivation
COMPONENTS = {"W1": 0, "W2": 1, "B1": 2, "B2": 3, "W": 4, "B": 5}


class DegenerateCovarianceError(ArithmeticError):
    """Cholesky hit a non-positive pivot beyond tolerance."""


def _check_hurst(hurst: float) -> None:
    if not (0.0 < hurst < 1.0) or not np.isfinite(hurst):
        raise ValueError(f"hurst must lie in (0, 1), got {hurst!r}")


def fbm_cov(s, t, hurst: float):
    """Covariance of standard fBm: ½(s^{2H} + t^{2H} - |s-t|^{2H})."""
    _check_hurst(hurst)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("times must be nonnegative")
    h2 = 2.0 * hurst
    out = 0.5 * (s**h2 + t**h2 - np.abs(s - t) ** h2)
    return float(out) if out.ndim == 0 else out


def mfbm_cov(s, t, hurst: float, alpha: float):
    """Covariance of ``alpha * W + B^H`` with independent W and B^H."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    out = alpha**2 * np.minimum(s, t) + fbm_cov(s, t, hurst)
    return float(out) if np.ndim(out) == 0 else out


def fgn_autocorr(k, hurst: float):
    """Lag-k autocorrelation of unit fractional Gaussian noise, k >= 1."""
    _check_hurst(hurst)
    k = np.asarray(k, dtype=float)
    if np.any(k < 1):
        raise ValueError("lag must be >= 1 (lag 0 is the unit variance)")
    h2 = 2.0 * hurst
    out = 0.5 * ((k + 1) ** h2 - 2.0 * k**h2 + (k - 1) ** h2)
    return float(out) if out.ndim == 0 else out


def fgn_autocov(n_lags: int, hurst: float) -> np.ndarray:
    """Autocovariances at lags 0..n_lags-1 of unit-step fGn."""
    _check_hurst(hurst)
    k =np.arange(n_lags, dtype=float)
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)


@dataclass(frozen=True)
class NoiseSpec:
    hurst: float
    alpha: float = 0.0
    n_steps: int = 52
    horizon: float = 1.0
    seed: int = 0

    def __post_init__(self):
        _check_hurst(self.hurst)
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


@dataclass(frozen=True)
class Path:
    times: np.ndarray
    values: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict)


def substream(seed: int, component: str, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(COMPONENTS[component], int(block)))
    return np.random.Generator(np.random.Philox(ss))


@lru_cache(maxsize=64)
def _circulant_sqrt_eigs(n: int, hurst: float) -> np.ndarray | None:
    """sqrt(eig/m) of the minimal circulant embedding, or None if not PSD."""
    gamma = fgn_autocov(n + 1, hurst)
    row = np.concatenate([gamma, gamma[-2:0:-1]])  # length m = 2n
    eig = np.fft.fft(row).real
    if eig.min() < -NEG_EIG_TOL:
        return None
    eig = np.clip(eig, 0.0, None)
    return np.sqrt(eig / row.size)


@lru_cache(maxsize=16)
def _cholesky_factor(n: int, hurst: float) -> np.ndarray:
    cov = toeplitz(fgn_autocov(n, hurst))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    # slow path: tolerate pivots within CHOL_TOL of zero, reject anything worse
    lower = np.zeros_like(cov)
    for j in range(n):
        pivot = cov[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot < -CHOL_TOL or (j == 0 and pivot <= 0):
            raise DegenerateCovarianceError(f"non-positive pivot {pivot:.3e} at row {j}")
        lower[j, j] = np.sqrt(max(pivot, 0.0))
        if lower[j, j] > CHOL_TOL and j + 1 < n:
            lower[j + 1 :, j] = (cov[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def _fgn_block(rng: np.random.Generator, rows: int, n: int, hurst: float, method: str) -> np.ndarray:
    if method in ("auto", "circulant"):
        lam = _circulant_sqrt_eigs(n, hurst)
        if lam is not None:
            # real and imaginary parts are two independent exact samples
            pairs = (rows + 1) // 2
            z = rng.standard_normal((pairs, 2, lam.size))
            w = np.fft.fft(lam * (z[:, 0] + 1j * z[:, 1]), axis=1)[:, :n]
            out = np.empty((2 * pairs, n))
            out[0::2] = w.real
            out[1::2] = w.imag
            return out[:rows]
        if method == "circulant":
            raise DegenerateCovarianceError("circulant embedding is not nonnegative-definite")
    if method not in ("auto", "cholesky", "circulant"):
        raise ValueError(f"unknown method {method!r}")
    lower = _cholesky_factor(n, hurst)
    return rng.standard_normal((rows, n)) @ lower.T


def fgn_rows(
    seed: int,
    component: str,
    block: int,
    rows: int,
    n_steps: int,
    dt: float,
    hurst: float,
    method: str = "auto",
) -> np.ndarray:
    """First ``rows`` paths of fGn block ``block`` for one component."""
    rng = substream(seed, component, block)
    return _fgn_block(rng, rows, n_steps, hurst, method) * dt**hurst


def bm_rows(seed: int, component: str, block: int, rows: int, n_steps: int, dt: float) -> np.ndarray:
    rng = substream(seed, component, block)
    return rng.standard_normal((rows, n_steps)) * np.sqrt(dt)


def blocks(n_paths: int):
    """Yield ``(block index, start, stop)`` covering ``range(n_paths)``."""
    for block, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        yield block, start, min(start + BLOCK_SIZE, n_paths)


def fgn_matrix(
    n_paths: int,
    n_steps: int,
    dt: float,
    hurst: float,
    seed: int,
    component: str = "B",
    method: str = "auto",
) -> np.ndarray:
    """``n_paths x n_steps`` fGn increments with variance ``dt**(2H)``."""
    _check_hurst(hurst)
    out = np.empty((n_paths, n_steps))
    for block, start, stop in blocks(n_paths):
        out[start:stop] = fgn_rows(seed, component, block, stop - start, n_steps, dt, hurst, method)
    return out


def bm_matrix(n_paths: int, n_steps: int, dt: float, seed: int, component: str = "W") -> np.ndarray:
    """``n_paths x n_steps`` Brownian increments with variance ``dt``."""
    out = np.empty((n_paths, n_steps))
    for block, start, stop in blocks(n_paths):
        out[start:stop] = bm_rows(seed, component, block, stop - start, n_steps, dt)
    return out


def _times(spec: NoiseSpec) -> np.ndarray:
    return np.arange(spec.n_steps + 1) * spec.dt


def simulate_fgn(spec: NoiseSpec, method: str = "auto") -> Path:
    """One path of fGn increments (``values`` has ``n_steps`` entries)."""
    inc = fgn_matrix(1, spec.n_steps, spec.dt, spec.hurst, spec.seed, method=method)[0]
    return Path(times=_times(spec)[1:], values=inc, seed=spec.seed, meta={"kind": "fgn"})


def simulate_mfbm_paths(spec: NoiseSpec, n_paths: int, method: str = "auto") -> np.ndarray:
    """Matrix of mixed fBm paths, first column zero."""
    inc = fgn_matrix(n_paths, spec.n_steps, spec.dt, spec.hurst, spec.seed, "B", method)
    if spec.alpha > 0:
        inc += spec.alpha * bm_matrix(n_paths, spec.n_steps, spec.dt, spec.seed, "W")
    paths = np.zeros((n_paths, spec.n_steps + 1))
    np.cumsum(inc, axis=1, out=paths[:, 1:])
    return paths


def simulate_mfbm(spec: NoiseSpec, method: str = "auto") -> Path:
    values = simulate_mfbm_paths(spec, 1, method)[0]
    return Path(times=_times(spec), values=values, seed=spec.seed, meta={"kind": "mfbm"})
