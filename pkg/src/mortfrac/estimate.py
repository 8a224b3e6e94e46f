"""Physical-measure estimators: R/S Hurst, power variations, drift, correlation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammaln

MIN_LENGTH = 64
H_CLIP = (0.01, 0.99)


class EstimationError(ValueError):
    """Base class; ``step`` names the calibration step when known."""

    def __init__(self, message: str, step: str | None = None):
        super().__init__(f"{step}: {message}" if step else message)
        self.step = step


class DegenerateSeriesError(EstimationError):
    pass


class IllConditionedError(EstimationError):
    pass


class SingularError(EstimationError):
    pass


class DomainError(EstimationError):
    pass


@dataclass(frozen=True)
class ObservedSeries:
    """Equidistant observations at times i/n, i = 0..N-1."""

    values: np.ndarray
    n: int = 52
    label: str = "rate"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if self.n < 1:
            raise ValueError("n must be positive")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @property
    def n_increments(self) -> int:
        return self.values.size - 1

    @property
    def horizon(self) -> float:
        return self.n_increments / self.n

    def increments(self) -> np.ndarray:
        return np.diff(self.values)


def _require_length(x: ObservedSeries, minimum: int = MIN_LENGTH) -> None:
    if len(x) < minimum:
        raise ValueError(f"series needs >= {minimum} observations, got {len(x)}")


# ---------------------------------------------------------------------------
# Hurst exponent
# ---------------------------------------------------------------------------

def expected_rs(size: int) -> float:
    """Anis-Lloyd expected R/S of ``size`` iid normal observations."""
    if size < 3:
        raise ValueError("block size must be >= 3")
    i = np.arange(1, size)
    tail = np.sqrt((size - i) / i).sum()
    # log-gamma keeps the ratio finite for any size, so the usual large-size
    # asymptotic branch (and the jump it introduces) is not needed
    front = math.exp(gammaln((size - 1) / 2) - gammaln(size / 2)) / math.sqrt(math.pi)
    return front * tail


def dyadic_ladder(length: int, smallest: int = 8) -> list[int]:
    sizes, size = [], smallest
    while size <= length // 4:
        sizes.append(size)
        size *= 2
    return sizes


def rescaled_range(values: np.ndarray, size: int) -> float:
    """Mean R/S over the non-overlapping blocks of ``size`` observations."""
    k = values.size // size
    blocks = values[: k * size].reshape(k, size)
    y = blocks - blocks.mean(axis=1, keepdims=True)
    z = np.cumsum(y, axis=1)
    r = z.max(axis=1) - z.min(axis=1)
    s = np.sqrt((y**2).mean(axis=1))
    if np.any(s == 0):
        raise DegenerateSeriesError(f"zero variance in a block of size {size}")
    return float((r / s).mean())


@dataclass(frozen=True)
class HurstFit:
    h: float
    slope: float
    r_squared: float
    sizes: tuple
    log_rs: tuple
    log_expected: tuple
    clipped: bool


def estimate_hurst_rs(x) -> tuple[float, HurstFit]:
    """R/S estimate of H, corrected by the expected R/S of white noise.

    The statistic is computed on the series exactly as given.  H is 0.5
    plus the least-squares slope of log(R/S) - log(E[R/S]) against log N
    over dyadic block sizes N = 8, 16, ..., length/4.
    """
    x = x if isinstance(x, ObservedSeries) else ObservedSeries(np.asarray(x, dtype=float))
    _require_length(x)
    v = x.values
    if np.ptp(v) == 0:
        raise DegenerateSeriesError("constant series")
    sizes = dyadic_ladder(v.size)
    if len(sizes) < 2:
        raise ValueError("series too short for two block sizes")
    log_n = np.log(sizes)
    log_rs = np.log([rescaled_range(v, s) for s in sizes])
    log_e = np.log([expected_rs(s) for s in sizes])
    y = log_rs - log_e
    slope, intercept = np.polyfit(log_n, y, 1)
    resid = y - (slope * log_n + intercept)
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid**2).sum() / ss_tot if ss_tot > 0 else 1.0
    raw = 0.5 + slope
    h = float(np.clip(raw, *H_CLIP))
    fit = HurstFit(h, float(slope), float(r2), tuple(sizes), tuple(log_rs), tuple(log_e), h != raw)
    return h, fit


# ---------------------------------------------------------------------------
# volatility and mixing weight
# ---------------------------------------------------------------------------

def power_variations(x: ObservedSeries) -> tuple[float, float]:
    """V^n = sum |X_i - X_{i-1}|^2 and U^n = sum |X_{i+1} - X_{i-1}|^2."""
    v = x.values
    if v.size < 3:
        raise ValueError("need at least 3 observations")
    d1 = np.diff(v)
    d2 = v[2:] - v[:-2]
    return float(d1 @ d1), float(d2 @ d2)


@dataclass(frozen=True)
class VolatilityFit:
    alpha: float
    sigma: float
    v: float
    u: float
    method: str
    alpha_clipped: bool = False


def estimate_alpha_sigma(x: ObservedSeries, h: float, method: str = "moments") -> VolatilityFit:
    """Mixing weight and volatility from the power variations.

    ``method="moments"`` solves the expected values
    E V = sigma^2 T (alpha^2 + n^{1-2H}) and
    E U = sigma^2 T (2 alpha^2 + 2^{2H} n^{1-2H}) for (alpha, sigma); the
    Brownian-fractional cross terms have zero mean and drop out.  A negative
    alpha^2 solution is reported as alpha = 0 with ``alpha_clipped`` set.

    ``method="abs_cross"`` uses the closed forms
    alpha = 2(2^{H+1/2} - 2) V / (n^{H-1/2} (U - 2V)) and
    sigma = sqrt(V / (alpha^2 T + T n^{1-2H} + 2 alpha T n^{1/2-H})),
    which treat the cross terms as if they had a positive mean.
    """
    if not 0.5 < h < 1:
        raise ValueError("h must lie in (0.5, 1)")
    v, u = power_variations(x)
    if not (math.isfinite(v) and math.isfinite(u)):
        raise DomainError("power variations are not finite")
    n, T = x.n, x.horizon
    gap = u - 2.0 * v
    if abs(gap) < 1e-12 * v or v == 0:
        raise IllConditionedError("U - 2V vanishes; the fractional part is not identifiable")
    frac = n ** (1.0 - 2.0 * h)
    if method == "moments":
        sigma2 = gap / (T * frac * (2.0 ** (2 * h) - 2.0))
        if sigma2 <= 0:
            raise DomainError("U - 2V is negative; no positive volatility solves the moment equations")
        alpha2 = v / (sigma2 * T) - frac
        clipped = alpha2 < 0
        return VolatilityFit(math.sqrt(max(alpha2, 0.0)), math.sqrt(sigma2), v, u, method, clipped)
    if method == "abs_cross":
        alpha = abs(2.0 * (2.0 ** (h + 0.5) - 2.0) * v / (n ** (h - 0.5) * gap))
        denom = alpha**2 * T + T * frac + 2.0 * alpha * T * n ** (0.5 - h)
        return VolatilityFit(alpha, math.sqrt(v / denom), v, u, method)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# drift
# ---------------------------------------------------------------------------

def estimate_drift_ls(x: ObservedSeries) -> tuple[float, float]:
    """Closed-form minimiser of sum |dX_i - (m - theta X_{i-1}) / n|^2."""
    prev = x.values[:-1]
    d = np.diff(x.values)
    k = d.size
    s_x, s_xx = prev.sum(), prev @ prev
    s_d, s_dx = d.sum(), d @ prev
    den = k * s_xx - s_x**2
    if den <= 1e-14 * k * s_xx or den == 0:
        raise SingularError("series has no spread; least squares is singular")
    m = x.n * (s_d * s_xx - s_dx * s_x) / den
    theta = x.n * (s_d * s_x - k * s_dx) / den
    return float(m), float(theta)


def estimate_theta_ergodic(x: ObservedSeries, h: float, sigma: float, long_term_mean: float) -> tuple[float, float]:
    """Ergodic estimator theta = (sample variance / (sigma^2 H Gamma(2H)))^{-1/(2H)}.

    The drift level follows from the supplied long-term mean m / theta.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    vals = x.values[1:]
    k = vals.size
    ratio = (k * (vals @ vals) - vals.sum() ** 2) / (k**2 * sigma**2 * h * gamma_fn(2 * h))
    if not ratio > 0:
        raise DomainError("sample variance ratio is not positive")
    theta = ratio ** (-1.0 / (2.0 * h))
    return float(theta * long_term_mean), float(theta)


# ---------------------------------------------------------------------------
# correlation
# ---------------------------------------------------------------------------

def drift_residuals(x: ObservedSeries, m: float, theta: float) -> np.ndarray:
    prev = x.values[:-1]
    return np.diff(x.values) - (m - theta * prev) / x.n


@dataclass(frozen=True)
class SeriesFit:
    """Fitted parameters of one coordinate."""

    h: float
    alpha: float
    sigma: float
    m: float
    theta: float

    def scale(self) -> float:
        return self.sigma * self.alpha


def estimate_rho(r: ObservedSeries, mu: ObservedSeries, fit_r: SeriesFit, fit_mu: SeriesFit, normalization: str = "horizon") -> tuple[float, bool]:
    """Correlation of the Brownian parts from drift-removed increments.

    ``normalization="horizon"`` divides the residual cross-product sum by
    sigma1 sigma2 alpha1 alpha2 T; ``"n"`` multiplies it by n instead.
    Returns (rho, clipped).
    """
    if len(r) != len(mu):
        raise ValueError("series must have equal lengths")
    denom = fit_r.scale() * fit_mu.scale()
    if denom == 0:
        raise DomainError("rho is undefined when a sigma or alpha estimate is zero")
    e_r = drift_residuals(r, fit_r.m, fit_r.theta)
    e_mu = drift_residuals(mu, fit_mu.m, fit_mu.theta)
    cross = float((e_r - e_r.mean()) @ (e_mu - e_mu.mean()))
    if normalization == "horizon":
        raw = cross / (denom * r.horizon)
    elif normalization == "n":
        raw = r.n * cross / denom
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    rho = float(np.clip(raw, -1.0, 1.0))
    return rho, rho != raw


# ---------------------------------------------------------------------------
# sequential calibration
# ---------------------------------------------------------------------------

@dataclass
class EstimationReport:
    rate: SeriesFit
    mortality: SeriesFit
    rho: float
    diagnostics: dict = field(default_factory=dict)

    def as_params(self, **extra):
        from .model import ModelParams

        return ModelParams(
            h1=self.rate.h, alpha1=self.rate.alpha, sigma1=self.rate.sigma, m1=self.rate.m, theta1=self.rate.theta,
            h2=self.mortality.h, alpha2=self.mortality.alpha, sigma2=self.mortality.sigma, m2=self.mortality.m,
            theta2=self.mortality.theta, rho=self.rho, **extra,
        )

    def table(self) -> list[tuple[str, float, float]]:
        """Rows (parameter, rate value, mortality value); rho sits in the rate column."""
        rows = [(name, getattr(self.rate, name), getattr(self.mortality, name)) for name in ("h", "alpha", "sigma", "m", "theta")]
        rows.append(("rho", self.rho, float("nan")))
        return rows

    def to_dict(self) -> dict:
        return {"rate": asdict(self.rate), "mortality": asdict(self.mortality), "rho": self.rho, "diagnostics": self.diagnostics}


def _hurst_input(x: ObservedSeries, source: str) -> np.ndarray:
    if source == "increments":
        return x.increments()
    if source == "levels":
        return x.values
    raise ValueError(f"unknown hurst source {source!r}")


def _fit_noise(x, step_h, step_vol, hurst_source, vol_method, diag, key):
    try:
        h, hfit = estimate_hurst_rs(ObservedSeries(_hurst_input(x, hurst_source), x.n, x.label))
    except (EstimationError, ValueError) as exc:
        raise EstimationError(str(exc), step_h) from exc
    if h <= 0.5:
        raise DomainError(f"estimated H = {h:.4f} is not above 1/2", step_vol)
    try:
        vol = estimate_alpha_sigma(x, h, vol_method)
    except (EstimationError, ValueError) as exc:
        raise EstimationError(str(exc), step_vol) from exc
    diag[key] = {
        "rs_slope": hfit.slope,
        "rs_r_squared": hfit.r_squared,
        "h_clipped": hfit.clipped,
        "V": vol.v,
        "U": vol.u,
        "alpha_clipped": vol.alpha_clipped,
    }
    return h, vol


def calibrate_physical(
    r: ObservedSeries,
    mu: ObservedSeries,
    long_term_mean_rate: float,
    hurst_source: str = "levels",
    vol_method: str = "moments",
    rho_normalization: str = "horizon",
) -> EstimationReport:
    """Sequential fit: H, (alpha, sigma) and ergodic drift for rates, the same
    noise steps with least-squares drift for mortality, then rho."""
    if len(r) != len(mu):
        raise ValueError("series must have equal lengths")
    _require_length(r)
    diag: dict = {"hurst_source": hurst_source, "vol_method": vol_method, "rho_normalization": rho_normalization}
    h1, vol1 = _fit_noise(r, "step 1 (rate Hurst)", "step 2 (rate alpha/sigma)", hurst_source, vol_method, diag, "rate")
    try:
        m1, th1 = estimate_theta_ergodic(r, h1, vol1.sigma, long_term_mean_rate)
    except EstimationError as exc:
        raise EstimationError(str(exc), "step 3 (rate drift)") from exc
    h2, vol2 = _fit_noise(mu, "step 4 (mortality Hurst)", "step 4 (mortality alpha/sigma)", hurst_source, vol_method, diag, "mortality")
    try:
        m2, th2 = estimate_drift_ls(mu)
    except EstimationError as exc:
        raise EstimationError(str(exc), "step 5 (mortality drift)") from exc
    fit_r = SeriesFit(h1, vol1.alpha, vol1.sigma, m1, th1)
    fit_mu = SeriesFit(h2, vol2.alpha, vol2.sigma, m2, th2)
    try:
        rho, clipped = estimate_rho(r, mu, fit_r, fit_mu, rho_normalization)
    except EstimationError as exc:
        raise EstimationError(str(exc), "step 6 (rho)") from exc
    diag["rho_clipped"] = clipped
    return EstimationReport(fit_r, fit_mu, rho, diag)
