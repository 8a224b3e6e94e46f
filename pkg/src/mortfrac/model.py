"""Bivariate mean-reverting model for short rates and excess mortality.

Both coordinates follow a Vasicek-type equation driven by a mixed fBm::

    dr  = (m1 - theta1 r ) dt + sigma1 (alpha1 dW1 + dB1^{H1})
    dmu = (m2 - theta2 mu) dt + sigma2 (alpha2 (rho dW1 + sqrt(1-rho^2) dW2) + dB2^{H2})

Rates are carried in percent per annum by default (``rate_unit="percent"``),
mortality in the per-person-year scale of the source data.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import integrate, special, stats
from scipy.signal import lfilter

from . import fracnoise

HURST_MIN, HURST_MAX = 0.5, 0.999
WEEKS_PER_YEAR = 52


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Physical-measure parameters.  Defaults are a 2015-2024 US fit.

    ``r0`` (4.25%) and ``mu0`` (0) are not part of that fit; see the README for how
    they were chosen.
    """

    h1: float = 0.85957
    alpha1: float = 0.24815
    sigma1: float = 1.24565
    m1: float = 2.26377
    theta1: float = 0.54157
    h2: float = 0.78416
    alpha2: float = 0.32636
    sigma2: float = 0.00286
    m2: float = 0.00068
    theta2: float = 1.17364
    rho: float = -0.29265
    r0: float = 4.25
    mu0: float = 0.0
    rate_unit: str = "percent"

    def __post_init__(self):
        values = {k: v for k, v in asdict(self).items() if k != "rate_unit"}
        bad = [k for k, v in values.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite parameters: {bad}")
        for name in ("h1", "h2"):
            h = getattr(self, name)
            if not HURST_MIN <= h < HURST_MAX:
                raise ValueError(f"{name}={h} outside [{HURST_MIN}, {HURST_MAX})")
        for name in ("sigma1", "sigma2", "theta1", "theta2"):
            if getattr(self, name) < 0 or (name.startswith("theta") and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha weights must be nonnegative")
        if abs(self.rho) > 1:
            raise ValueError("|rho| must be <= 1")
        if self.rate_unit not in ("percent", "decimal"):
            raise ValueError("rate_unit must be 'percent' or 'decimal'")

    @property
    def rate_scale(self) -> float:
        """Multiplier turning model rates into decimal rates."""
        return 0.01 if self.rate_unit == "percent" else 1.0

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def rate_factor(self) -> dict:
        return dict(m=self.m1, theta=self.theta1, sigma=self.sigma1, alpha=self.alpha1, hurst=self.h1, x0=self.r0)

    def mortality_factor(self) -> dict:
        return dict(m=self.m2, theta=self.theta2, sigma=self.sigma2, alpha=self.alpha2, hurst=self.h2, x0=self.mu0)


@dataclass(frozen=True)
class RiskPremiums:
    gamma1: float = 0.0
    gamma2: float = 0.0
    eta1: float = 0.0
    eta2: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in asdict(self).values()):
            raise ValueError("risk premiums must be finite")


@dataclass(frozen=True)
class PathSet:
    rate_paths: np.ndarray
    mortality_paths: np.ndarray
    dt: float
    measure: str
    seed: int
    rate_unit: str = "percent"

    @property
    def n_paths(self) -> int:
        return self.rate_paths.shape[0]

    @property
    def n_steps(self) -> int:
        return self.rate_paths.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def rate_scale(self) -> float:
        return 0.01 if self.rate_unit == "percent" else 1.0


def q_drift_levels(p: ModelParams, rp: RiskPremiums) -> tuple[float, float]:
    """Drift levels after the change to the pricing measure."""
    m1q = p.m1 + p.alpha1 * p.sigma1 * rp.gamma1 + p.sigma1 * rp.eta1
    m2q = (
        p.m2
        + p.alpha2 * p.sigma2 * p.rho * rp.gamma1
        + p.alpha2 * p.sigma2 * math.sqrt(1.0 - p.rho**2) * rp.gamma2
        + p.sigma2 * rp.eta2
    )
    return m1q, m2q


def to_pricing(p: ModelParams, rp: RiskPremiums | None) -> ModelParams:
    """Same model with the drift levels replaced by their pricing-measure values."""
    if rp is None:
        return p
    m1q, m2q = q_drift_levels(p, rp)
    return p.with_(m1=m1q, m2=m2q)


# ---------------------------------------------------------------------------
# analytics
# ---------------------------------------------------------------------------

def ou_mean(m: float, theta: float, x0: float, t):
    t = np.asarray(t, dtype=float)
    lvl = m / theta
    return lvl + np.exp(-theta * t) * (x0 - lvl)


def nu_squared(alpha: float, hurst: float, theta: float, sigma: float, t: float, method: str = "quad") -> float:
    """Variance at time t of sigma * int_0^t e^{-theta(t-s)} d(alpha W + B^H)_s.

    ``method="quad"`` integrates the double integral after reducing it to one
    dimension (the endpoint singularity x^{2H-2} is handled by an algebraic
    quadrature weight).  ``method="gamma"`` uses incomplete-gamma special
    functions instead; the two agree to quadrature precision.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    bm = (alpha**2) * (-math.expm1(-2.0 * theta * t)) / (2.0 * theta)
    if hurst == 0.5:
        return sigma**2 * (bm - math.expm1(-2.0 * theta * t) / (2.0 * theta))
    a_h = hurst * (2.0 * hurst - 1.0)
    if method == "quad":
        val, err = integrate.quad(
            lambda x: np.exp(-theta * x) - np.exp(theta * (x - 2.0 * t)),
            0.0,
            t,
            weight="alg",
            wvar=(2.0 * hurst - 2.0, 0.0),
            epsabs=0.0,
            epsrel=1e-11,
            limit=200,
        )
        if not np.isfinite(val) or abs(err) > 1e-8 * abs(val):
            raise QuadratureError(f"variance quadrature did not converge (err={err:.2e})")
        frac = a_h * val / theta
    elif method == "gamma":
        u, x = 2.0 * hurst - 1.0, theta * t
        lower = special.gamma(u) * special.gammainc(u, x)
        # e^{-x} gamma*(u, x) = e^{-2x} int_0^x y^{u-1} e^y dy
        upper = math.exp(-2.0 * x) * x**u / u * special.hyp1f1(u, u + 1.0, x)
        frac = a_h * theta ** (-2.0 * hurst) * (lower - upper)
    else:
        raise ValueError(f"unknown method {method!r}")
    return sigma**2 * (bm + frac)


def nu_squared_limit(alpha: float, hurst: float, theta: float, sigma: float) -> float:
    return alpha**2 * sigma**2 / (2 * theta) + sigma**2 * special.gamma(2 * hurst + 1) / (2 * theta ** (2 * hurst))


def rt_moments(p: ModelParams, t: float) -> tuple[float, float]:
    """Mean and variance of the short rate at time t (model units)."""
    mean = float(ou_mean(p.m1, p.theta1, p.r0, t))
    return mean, nu_squared(p.alpha1, p.h1, p.theta1, p.sigma1, t)


def mu_moments(p: ModelParams, t: float) -> tuple[float, float]:
    mean = float(ou_mean(p.m2, p.theta2, p.mu0, t))
    return mean, nu_squared(p.alpha2, p.h2, p.theta2, p.sigma2, t)


def prob_rate_nonneg(p: ModelParams, t: float) -> float:
    if t <= 0:
        raise ValueError("t must be positive")
    mean, var = rt_moments(p, t)
    return float(stats.norm.cdf(mean / math.sqrt(var)))


def instantaneous_corr(p: ModelParams, dt: float) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    num = p.rho * p.sigma1 * p.sigma2 * p.alpha1 * p.alpha2 * dt
    if num == 0:
        return 0.0
    d1 = math.sqrt(p.sigma1**2 * p.alpha1**2 * dt + p.sigma1**2 * dt ** (2 * p.h1))
    d2 = math.sqrt(p.sigma2**2 * p.alpha2**2 * dt + p.sigma2**2 * dt ** (2 * p.h2))
    return num / (d1 * d2)


@dataclass(frozen=True)
class TailBounds:
    lower: float
    upper: float
    nu_T: float
    lower_level: float
    upper_level: float
    heuristic_lower: bool = True


def tail_bounds(p: ModelParams, horizon: float, a: float, e_sup_estimate: float) -> TailBounds:
    """Gaussian-process bounds on the running maximum of excess mortality.

    ``lower`` bounds P(sup mu >= a + E[mu]) from below, where E[mu] is taken
    as the stationary mean m2/theta2 (the centering time is ambiguous, so this
    side is reported as heuristic).  ``upper`` bounds
    P(sup mu >= a + E[sup mu]) from above; E[sup mu] has to be supplied,
    normally from simulation (see :func:`expected_sup_mortality`).
    """
    if a < 0:
        raise ValueError("a must be nonnegative")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    nu2 = nu_squared(p.alpha2, p.h2, p.theta2, p.sigma2, horizon)
    nu = math.sqrt(nu2)
    lower = 2.0 * stats.norm.sf(a / nu)
    upper = math.exp(-(a**2) / (2.0 * nu2))
    return TailBounds(
        lower=float(lower),
        upper=float(upper),
        nu_T=nu,
        lower_level=a + p.m2 / p.theta2,
        upper_level=a + e_sup_estimate,
    )


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("MORTFRAC_THREADS", "1")))
    except ValueError:
        return 1


def _map_blocks(fn, n_paths: int) -> None:
    jobs = list(fracnoise.blocks(n_paths))
    workers = min(n_threads(), len(jobs))
    if workers <= 1:
        for job in jobs:
            fn(*job)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda job: fn(*job), jobs))


def _frac_rows(seed, tag, block, rows, n_steps, dt, hurst):
    if hurst == 0.5:
        # H = 1/2 is a second, independent Brownian motion
        return fracnoise.bm_rows(seed, tag, block, rows, n_steps, dt)
    return fracnoise.fgn_rows(seed, tag, block, rows, n_steps, dt, hurst)


def driving_noise(n_paths: int, n_steps: int, dt: float, h1: float, h2: float, seed: int) -> dict:
    """Raw increments dW1, dW2, dB1, dB2 as ``n_paths x n_steps`` matrices."""
    out = {k: np.empty((n_paths, n_steps)) for k in ("W1", "W2", "B1", "B2")}

    def fill(block, start, stop):
        rows = stop - start
        out["W1"][start:stop] = fracnoise.bm_rows(seed, "W1", block, rows, n_steps, dt)
        out["W2"][start:stop] = fracnoise.bm_rows(seed, "W2", block, rows, n_steps, dt)
        out["B1"][start:stop] = _frac_rows(seed, "B1", block, rows, n_steps, dt, h1)
        out["B2"][start:stop] = _frac_rows(seed, "B2", block, rows, n_steps, dt, h2)

    _map_blocks(fill, n_paths)
    return out


def mortality_brownian_shock(dw1: np.ndarray, dw2: np.ndarray, rho: float) -> np.ndarray:
    return rho * dw1 + math.sqrt(1.0 - rho**2) * dw2


def _ou_filter(shocks: np.ndarray, theta: float, dt: float) -> np.ndarray:
    """X_k = e^{-theta dt} X_{k-1} + e^{-theta dt / 2} shock_k with X_0 = 0."""
    decay = math.exp(-theta * dt)
    out = np.zeros((shocks.shape[0], shocks.shape[1] + 1))
    out[:, 1:] = lfilter([math.exp(-0.5 * theta * dt)], [1.0, -decay], shocks, axis=1)
    return out


@dataclass(frozen=True)
class NoiseParts:
    """Zero-started stochastic parts of both coordinates (already times sigma)."""

    rate: np.ndarray
    mortality: np.ndarray
    dt: float
    seed: int
    shocks: dict = field(default_factory=dict, repr=False)


def simulate_noise_parts(p: ModelParams, n_paths: int, n_steps: int, horizon: float, seed: int) -> NoiseParts:
    """Stochastic convolutions on the grid, independent of the drift levels.

    Paths are ``deterministic mean + noise part``; keeping the noise fixed
    while moving drift levels gives common random numbers across risk
    premiums and scenarios.
    """
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be >= 1")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    dt = horizon / n_steps
    rate = np.empty((n_paths, n_steps + 1))
    mort = np.empty((n_paths, n_steps + 1))
    sq = math.sqrt(1.0 - p.rho**2)

    def fill(block, start, stop):
        rows = stop - start
        w1 = fracnoise.bm_rows(seed, "W1", block, rows, n_steps, dt)
        w2 = fracnoise.bm_rows(seed, "W2", block, rows, n_steps, dt)
        b1 = _frac_rows(seed, "B1", block, rows, n_steps, dt, p.h1)
        b2 = _frac_rows(seed, "B2", block, rows, n_steps, dt, p.h2)
        s1 = p.sigma1 * (p.alpha1 * w1 + b1)
        s2 = p.sigma2 * (p.alpha2 * (p.rho * w1 + sq * w2) + b2)
        rate[start:stop] = _ou_filter(s1, p.theta1, dt)
        mort[start:stop] = _ou_filter(s2, p.theta2, dt)

    _map_blocks(fill, n_paths)
    return NoiseParts(rate=rate, mortality=mort, dt=dt, seed=seed)


def assemble(p: ModelParams, parts: NoiseParts, measure: str = "physical") -> PathSet:
    times = np.arange(parts.rate.shape[1]) * parts.dt
    rate = parts.rate + ou_mean(p.m1, p.theta1, p.r0, times)
    mort = parts.mortality + ou_mean(p.m2, p.theta2, p.mu0, times)
    return PathSet(rate, mort, parts.dt, measure, parts.seed, p.rate_unit)


def simulate_bivariate(
    p: ModelParams,
    rp: RiskPremiums | None = None,
    n_paths: int = 10_000,
    n_steps: int = 260,
    horizon: float = 5.0,
    seed: int = 0,
) -> PathSet:
    """Simulate (r, mu) on a uniform grid.

    The drift is integrated exactly (exponential integrator) and each step
    adds the exact driving increments weighted by e^{-theta dt/2}.  With
    ``rp`` the pricing-measure drift levels are used.
    """
    q = to_pricing(p, rp)
    parts = simulate_noise_parts(q, n_paths, n_steps, horizon, seed)
    return assemble(q, parts, "pricing" if rp is not None else "physical")


def simulate_short_rate(p: ModelParams, n_paths: int, n_steps: int, horizon: float, seed: int = 0) -> np.ndarray:
    """Short-rate paths alone (model units).

    Uses the same substreams as the rate coordinate of
    :func:`simulate_bivariate`, so the paths coincide with it.
    """
    if n_paths < 1 or n_steps < 1 or not horizon > 0:
        raise ValueError("n_paths, n_steps and horizon must be positive")
    dt = horizon / n_steps
    out = np.empty((n_paths, n_steps + 1))

    def fill(block, start, stop):
        rows = stop - start
        w1 = fracnoise.bm_rows(seed, "W1", block, rows, n_steps, dt)
        b1 = _frac_rows(seed, "B1", block, rows, n_steps, dt, p.h1)
        out[start:stop] = _ou_filter(p.sigma1 * (p.alpha1 * w1 + b1), p.theta1, dt)

    _map_blocks(fill, n_paths)
    out += ou_mean(p.m1, p.theta1, p.r0, np.arange(n_steps + 1) * dt)
    return out


def expected_sup_mortality(p: ModelParams, horizon: float, n_paths: int = 10_000, steps_per_year: int = WEEKS_PER_YEAR, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo mean of the running maximum of mu over [0, horizon] and its SE."""
    n_steps = max(1, int(round(horizon * steps_per_year)))
    paths = simulate_bivariate(p, None, n_paths, n_steps, horizon, seed)
    sup = paths.mortality_paths.max(axis=1)
    return float(sup.mean()), float(sup.std(ddof=1) / math.sqrt(n_paths))
