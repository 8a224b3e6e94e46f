"""Pricing-measure calibration: gamma1, attachment, exhaustion, gamma2."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import ModelParams, RiskPremiums, assemble, ou_mean, simulate_noise_parts, to_pricing
from .pricing import (
    BondSpec,
    InsufficientDataError,
    baseline_weeks,
    coupon_from_paths,
    mc_discount_factors,
    mortality_index,
    prf,
    zcb_curve,
    zcb_price_t0,
)

log = logging.getLogger(__name__)

GAMMA1_RANGE = (-20.0, 20.0)
GAMMA2_GRID = np.round(np.arange(0, 2001) * 0.001, 3)
MIN_PATHS = 10_000


class NoBracketError(ValueError):
    pass


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class MarketQuote:
    """Observed bond terms.  ``pfl`` is P(PRF > 0), ``expected_loss`` is E[PRF]."""

    prob_first_loss: float = 0.0106
    expected_loss: float = 0.0075
    coupon_obs: float = 0.03
    term: float = 5.0
    target_yield: float = 0.0257
    premium_spread: float | None = None

    def __post_init__(self):
        if not 0 <= self.expected_loss <= self.prob_first_loss <= 1:
            raise ValueError("need 0 <= expected_loss <= prob_first_loss <= 1")


@dataclass
class CalibrationResult:
    gamma1: float
    gamma2: float
    attachment: float
    exhaustion: float
    achieved: dict
    n_paths: int
    seed: int
    notes: list = field(default_factory=list)

    def risk_premiums(self) -> RiskPremiums:
        return RiskPremiums(gamma1=self.gamma1, gamma2=self.gamma2)


def _q_zcb(p: ModelParams, gamma1: float, horizon: float) -> float:
    q = to_pricing(p, RiskPremiums(gamma1=gamma1))
    s = q.rate_scale
    return zcb_price_t0(q.m1 * s, q.theta1, q.sigma1 * s, q.alpha1, q.h1, q.r0 * s, horizon)


def calibrate_gamma1(p: ModelParams, quote: MarketQuote, bounds=GAMMA1_RANGE) -> float:
    """gamma1 matching the pricing-measure ZCB to (1 + i)^-T (eta1 = eta2 = 0).

    The pricing-measure ZCB is monotone in gamma1, so the minimiser of
    |P(0,T) - (1+i)^-T| is the root of the signed gap.
    """
    target = (1.0 + quote.target_yield) ** (-quote.term)

    def gap(g):
        return _q_zcb(p, g, quote.term) - target

    lo, hi = bounds
    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo == 0:
        return lo
    if g_hi == 0:
        return hi
    if np.sign(g_lo) == np.sign(g_hi):
        raise NoBracketError(f"ZCB gap keeps sign {np.sign(g_lo):+.0f} on [{lo}, {hi}]")
    return float(optimize.brentq(gap, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps))


def _as_index(sim_index) -> np.ndarray:
    vals = getattr(sim_index, "values", sim_index)
    return np.atleast_2d(np.asarray(vals, dtype=float))


def calibrate_attachment(sim_index, pfl: float, rule: str = "pooled", min_paths: int = MIN_PATHS) -> float:
    """Attachment point from a target probability of first loss.

    ``rule="pooled"`` takes the 100(1 - pfl) percentile of all yearly index
    values pooled together.  ``rule="path_max"`` takes the same percentile
    of each path's largest yearly index, which makes P(PRF > 0) = pfl on the
    calibration sample.
    """
    x = _as_index(sim_index)
    if x.shape[0] < min_paths:
        raise InsufficientDataError(f"need >= {min_paths} paths, got {x.shape[0]}")
    if not 0 < pfl <= 1:
        raise ValueError("pfl must lie in (0, 1]")
    if rule == "pooled":
        pool = x.ravel()
    elif rule == "path_max":
        pool = x.max(axis=1)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return float(np.quantile(pool, 1.0 - pfl, method="linear"))


def conditional_prf_mean(x: np.ndarray, a: float, b: float) -> float:
    hit = (x > a).any(axis=1)
    if not hit.any():
        return float("nan")
    return float(prf(x[hit], a, b).mean())


def calibrate_exhaustion(sim_index, attachment: float, el: float, pfl: float, upper: float | None = None) -> float:
    """Exhaustion point b whose conditional mean PRF over attaching paths is el/pfl.

    The conditional mean falls monotonically from 1 (b -> a+) towards 0, so
    the minimiser of |mean - el/pfl| is a root, found by Brent's method on
    (a, upper].  ``upper`` defaults to 10a, or a + 1 when a <= 0.
    """
    x = _as_index(sim_index)
    if not 0 < pfl <= 1 or el < 0:
        raise ValueError("need 0 < pfl <= 1 and el >= 0")
    if el > pfl:
        raise InfeasibleError("expected loss cannot exceed the probability of first loss")
    a = attachment
    if not (x > a).any():
        raise InfeasibleError("no simulated path attaches")
    target = el / pfl
    if upper is None:
        upper = 10.0 * a if a > 0 else a + 1.0
    span = upper - a
    f = lambda b: conditional_prf_mean(x, a, b) - target
    lo = a + span * 1e-12
    f_lo = f(lo)
    if f_lo < 0:
        raise InfeasibleError(f"conditional loss {f_lo + target:.4f} below target {target:.4f} even at b -> a+")
    f_hi = f(upper)
    if f_hi > 0:
        log.warning("exhaustion pinned at the search bound %.6g (gap %.2e)", upper, f_hi)
        return float(upper)
    return float(optimize.brentq(f, lo, upper, xtol=1e-14 * max(1.0, abs(upper)), rtol=1e-14))


@dataclass(frozen=True)
class Gamma2Search:
    gamma2: float
    coupon: float
    gap: float
    grid: np.ndarray
    coupons: np.ndarray
    at_boundary: bool


def coupon_grid(p, rp, spec, baseline, n_paths, seed, gammas) -> np.ndarray:
    """Fair coupons over a gamma2 grid with shared random numbers.

    gamma2 moves only the mortality drift level, so one batch of noise
    serves every grid point.  For the linear index rules the noise part of
    the index is computed once and the deterministic part is added per point.
    """
    gammas = np.asarray(gammas, dtype=float)
    rp = rp or RiskPremiums()
    q0 = to_pricing(p, RiskPremiums(rp.gamma1, 0.0, rp.eta1, rp.eta2))
    parts = simulate_noise_parts(q0, n_paths, spec.n_weeks, spec.term, seed)
    base_paths = assemble(q0, parts, "pricing")
    zcb = zcb_curve(q0, None, spec.pay_times)
    annuity = zcb.sum() / spec.pay_freq
    df_T = mc_discount_factors(base_paths, spec.term)
    times = np.arange(spec.n_weeks + 1) * parts.dt
    base = baseline_weeks(baseline, spec.n_weeks)
    slope = q0.alpha2 * q0.sigma2 * math.sqrt(1 - q0.rho**2)
    out = np.empty(gammas.size)
    if spec.index_rule in ("point", "annual_average"):
        noise_index = mortality_index(parts.mortality + base, spec).values
        for i, g in enumerate(gammas):
            det = ou_mean(q0.m2 + slope * g, q0.theta2, q0.mu0, times)
            index = noise_index + mortality_index(det, spec).values
            epv = np.mean(prf(index, spec.attachment, spec.exhaustion) * df_T)
            out[i] = (1.0 - zcb[-1] + epv) / annuity
    else:
        for i, g in enumerate(gammas):
            q = q0.with_(m2=q0.m2 + slope * g)
            out[i] = coupon_from_paths(q, assemble(q, parts, "pricing"), spec, baseline).coupon
    return out


def calibrate_gamma2(p, rp, spec: BondSpec, quote: MarketQuote, baseline=None, n_paths=10_000, seed=0, grid=GAMMA2_GRID) -> Gamma2Search:
    """Grid argmin of |fair coupon(gamma2) - observed coupon|."""
    coupons = coupon_grid(p, rp, spec, baseline, n_paths, seed, grid)
    gaps = np.abs(coupons - quote.coupon_obs)
    i = int(np.argmin(gaps))
    boundary = i in (0, len(grid) - 1)
    if boundary:
        log.warning("gamma2 argmin %.3f lies on the grid boundary", grid[i])
    return Gamma2Search(float(grid[i]), float(coupons[i]), float(gaps[i]), np.asarray(grid), coupons, boundary)


def simulate_index(p, rp, spec: BondSpec, baseline, n_paths: int, seed: int):
    """Mortality index matrix (n_paths x K) and the paths; ``rp=None`` is the physical measure."""
    q = to_pricing(p, rp)
    parts = simulate_noise_parts(q, n_paths, spec.n_weeks, spec.term, seed)
    paths = assemble(q, parts, "pricing" if rp is not None else "physical")
    levels = paths.mortality_paths + baseline_weeks(baseline, paths.n_steps)
    return mortality_index(levels, spec).values, paths


def calibrate_pricing(
    p: ModelParams,
    quote: MarketQuote,
    spec: BondSpec,
    baseline=None,
    n_paths: int = 10_000,
    seed: int = 0,
    attachment_rule: str = "pooled",
    index_measure: str = "pricing",
    gamma1: float | None = None,
    grid=GAMMA2_GRID,
    return_search: bool = False,
):
    """gamma1 from the ZCB target, then (a, b), then gamma2 by grid search.

    ``index_measure="pricing"`` sets (a, b) on paths under Q with
    gamma2 = 0; ``"physical"`` uses paths under P instead.  ``gamma1`` may
    be fixed instead of calibrated.  With ``return_search`` the grid
    search is returned alongside the result.
    """
    if index_measure not in ("pricing", "physical"):
        raise ValueError("index_measure must be 'pricing' or 'physical'")
    notes = []
    g1 = calibrate_gamma1(p, quote) if gamma1 is None else float(gamma1)
    spec = spec.with_(term=quote.term)
    rp1 = RiskPremiums(gamma1=g1)
    index, _ = simulate_index(p, rp1 if index_measure == "pricing" else None, spec, baseline, n_paths, seed)
    a = calibrate_attachment(index, quote.prob_first_loss, attachment_rule)
    b = calibrate_exhaustion(index, a, quote.expected_loss, quote.prob_first_loss)
    spec = spec.with_(attachment=a, exhaustion=b)
    search = calibrate_gamma2(p, rp1, spec, quote, baseline, n_paths, seed, grid)
    if search.at_boundary:
        notes.append(f"gamma2 argmin on grid boundary ({search.gamma2:.3f})")
    reduction = prf(index, a, b)
    hit = reduction > 0
    achieved = {
        "pfl": float(hit.mean()),
        "cel": float(reduction[hit].mean()) if hit.any() else float("nan"),
        "el": float(reduction.mean()),
        "coupon": search.coupon,
        "zcb_T": _q_zcb(p, g1, quote.term),
        "zcb_target": (1 + quote.target_yield) ** (-quote.term),
    }
    result = CalibrationResult(g1, search.gamma2, a, b, achieved, n_paths, seed, notes)
    return (result, search) if return_search else result
