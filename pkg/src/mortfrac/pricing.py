"""Zero-coupon bonds, catastrophe mortality bond cash flows and payout risk."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from .model import WEEKS_PER_YEAR, ModelParams, PathSet, RiskPremiums, simulate_bivariate, to_pricing

INDEX_RULES = ("point", "annual_average", "annual_max")
EXP_LIMIT = 700.0


class InsufficientDataError(ValueError):
    pass


def _alg_quad(f, horizon: float, power: float) -> float:
    """int_0^T f(x) x^power dx, power > -1, to 1e-10 relative."""
    val, err = integrate.quad(
        f, 0.0, horizon, weight="alg", wvar=(power, 0.0), epsabs=0.0, epsrel=1e-10, limit=200
    )
    if not math.isfinite(val) or abs(err) > 1e-8 * max(abs(val), 1e-300):
        raise ArithmeticError(f"quadrature failed (value={val}, err={err})")
    return val


def zcb_log_price_t0(m, theta, sigma, alpha, hurst, r0, horizon) -> float:
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not 0.5 <= hurst < 1.0:
        raise ValueError("hurst must lie in [0.5, 1)")
    T, th = float(horizon), float(theta)
    e1 = -m / th * T + (m / th - r0) * (-math.expm1(-th * T)) / th
    bm_bracket = -math.exp(-2 * th * T) / (2 * th) + 2 / th * math.exp(-th * T) + T - 1.5 / th
    if hurst == 0.5:
        # the fractional part is then one more Brownian motion
        e2 = (alpha**2 + 1.0) * sigma**2 / (2 * th**2) * bm_bracket
        return e1 + e2
    e2 = alpha**2 * sigma**2 / (2 * th**2) * bm_bracket
    a_h = hurst * (2 * hurst - 1)
    g2 = 2 * hurst - 2
    g1 = 2 * hurst - 1
    i_plus_2 = _alg_quad(lambda x: np.exp(th * (x - 2 * T)), T, g2)  # e^{-2 th T} int e^{th x} x^{2H-2}
    i_minus_2 = _alg_quad(lambda x: np.exp(-th * x), T, g2)
    i_minus_1 = _alg_quad(lambda x: np.exp(-th * x), T, g1)
    i_plus_1 = _alg_quad(lambda x: np.exp(th * (x - T)), T, g1)  # e^{-th T} int e^{th x} x^{2H-1}
    bracket = (
        -i_plus_2 / (2 * th)
        + i_minus_2 / (2 * th)
        - i_minus_1 / g1
        - i_plus_1 / g1
        + T ** (2 * hurst) / (2 * hurst * g1)
    )
    e3 = sigma**2 * a_h / th**2 * bracket
    return e1 + e2 + e3


def zcb_price_t0(m, theta, sigma, alpha, hurst, r0, horizon) -> float:
    """Time-0 zero-coupon bond price under a mixed-fBm Vasicek short rate.

    All rate quantities (m, sigma, r0) must be in decimal per annum here.
    """
    expo = zcb_log_price_t0(m, theta, sigma, alpha, hurst, r0, horizon)
    if abs(expo) > EXP_LIMIT:
        raise OverflowError(f"log price {expo:.1f} outside +-{EXP_LIMIT}")
    return math.exp(expo)


def zcb_curve(p: ModelParams, rp: RiskPremiums | None, times) -> np.ndarray:
    """P(0, t) for each t, with the drift of the requested measure."""
    q = to_pricing(p, rp)
    s = q.rate_scale
    return np.array(
        [zcb_price_t0(q.m1 * s, q.theta1, q.sigma1 * s, q.alpha1, q.h1, q.r0 * s, t) for t in np.atleast_1d(times)]
    )


def _grid_index(paths: PathSet, upto: float) -> int:
    k = upto / paths.dt
    idx = int(round(k))
    if abs(k - idx) > 1e-9 * max(1.0, k) or not 0 <= idx <= paths.n_steps:
        raise ValueError(f"upto={upto} is not on the simulation grid")
    return idx


def cumulative_discount(paths: PathSet) -> np.ndarray:
    """exp(-int_0^t r) on every grid point, trapezoidal rule in decimal rates."""
    r = paths.rate_paths * paths.rate_scale
    steps = 0.5 * (r[:, 1:] + r[:, :-1]) * paths.dt
    out = np.ones_like(r)
    out[:, 1:] = np.exp(-np.cumsum(steps, axis=1))
    return out


def mc_discount_factors(paths: PathSet, upto: float) -> np.ndarray:
    idx = _grid_index(paths, upto)
    r = paths.rate_paths[:, : idx + 1] * paths.rate_scale
    if idx == 0:
        return np.ones(paths.n_paths)
    integral = np.trapezoid(r, dx=paths.dt, axis=1)
    return np.exp(-integral)


@dataclass(frozen=True)
class BondSpec:
    face: float = 100.0
    coupon_rate: float = 0.03
    pay_freq: int = 1
    term: float = 5.0
    attachment: float = 0.0
    exhaustion: float = 1.0
    index_rule: str = "annual_average"

    def __post_init__(self):
        if self.face <= 0:
            raise ValueError("face must be positive")
        if self.coupon_rate < 0:
            raise ValueError("coupon_rate must be nonnegative")
        n = self.term * self.pay_freq
        if self.pay_freq < 1 or abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("term * pay_freq must be a positive integer")
        if WEEKS_PER_YEAR % self.pay_freq:
            raise ValueError("pay_freq must divide 52")
        if not self.exhaustion > self.attachment:
            raise ValueError("exhaustion must exceed attachment")
        if self.index_rule not in INDEX_RULES:
            raise ValueError(f"index_rule must be one of {INDEX_RULES}")

    @property
    def n_payments(self) -> int:
        return int(round(self.term * self.pay_freq))

    @property
    def pay_times(self) -> np.ndarray:
        return np.arange(1, self.n_payments + 1) / self.pay_freq

    @property
    def weeks_per_period(self) -> int:
        return WEEKS_PER_YEAR // self.pay_freq

    @property
    def n_weeks(self) -> int:
        return self.n_payments * self.weeks_per_period

    def with_(self, **changes) -> "BondSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class MortalityIndexSeries:
    values: np.ndarray  # (n_paths, K) or (K,)
    rule: str


def mortality_index(weekly_mortality, spec: BondSpec) -> MortalityIndexSeries:
    """Per-payment-period mortality index from weekly levels.

    ``weekly_mortality`` holds grid values starting at t = 0 (column 0 is the
    issue date and is not part of any period), one row per path.
    """
    x = np.asarray(weekly_mortality, dtype=float)
    one = x.ndim == 1
    x = np.atleast_2d(x)
    w, k = spec.weeks_per_period, spec.n_payments
    if x.shape[1] - 1 < k * w:
        raise InsufficientDataError(f"need {k * w} weeks after issue, got {x.shape[1] - 1}")
    periods = x[:, 1 : k * w + 1].reshape(x.shape[0], k, w)
    if spec.index_rule == "point":
        vals = periods[:, :, -1]
    elif spec.index_rule == "annual_average":
        vals = periods.mean(axis=2)
    else:
        vals = periods.max(axis=2)
    return MortalityIndexSeries(vals[0] if one else vals, spec.index_rule)


def prf(index, a: float, b: float):
    """Principal reduction factor, vectorised over leading axes."""
    if not b > a:
        raise ValueError("exhaustion b must exceed attachment a")
    vals = index.values if isinstance(index, MortalityIndexSeries) else np.asarray(index, dtype=float)
    tranche = np.clip(vals - a, 0.0, b - a) / (b - a)
    out = np.minimum(1.0, tranche.sum(axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def loss_metrics(prf_values: np.ndarray) -> dict:
    """Probability of first loss, conditional expected loss, expected loss."""
    prf_values = np.asarray(prf_values)
    hit = prf_values > 0
    pfl = float(hit.mean())
    cel = float(prf_values[hit].mean()) if hit.any() else float("nan")
    return {"pfl": pfl, "cel": cel, "el": float(prf_values.mean())}


def baseline_weeks(baseline, n_weeks: int) -> np.ndarray:
    """Tile a 52-week baseline over ``n_weeks`` weeks; column 0 is issue time."""
    if baseline is None:
        return np.zeros(n_weeks + 1)
    base = np.asarray(getattr(baseline, "expected_rate", baseline), dtype=float)
    if base.size != WEEKS_PER_YEAR:
        raise ValueError("baseline must have 52 weekly entries")
    tiled = np.resize(base, n_weeks)
    return np.concatenate([[base[-1]], tiled])


@dataclass(frozen=True)
class PayoutDistribution:
    principal_pv: np.ndarray
    total_pv: np.ndarray
    discount_curve: np.ndarray
    prf: np.ndarray
    measure: str

    @property
    def coupon_pv(self) -> np.ndarray:
        return self.total_pv - self.principal_pv

    def loss_metrics(self) -> dict:
        return loss_metrics(self.prf)


def simulate_bond_paths(p, rp, spec: BondSpec, n_paths: int, seed: int) -> PathSet:
    """Weekly paths over the bond term."""
    return simulate_bivariate(p, rp, n_paths, spec.n_weeks, spec.term, seed)


def payouts_from_paths(paths: PathSet, spec: BondSpec, baseline=None, prf_override=None) -> PayoutDistribution:
    levels = paths.mortality_paths + baseline_weeks(baseline, paths.n_steps)
    index = mortality_index(levels, spec)
    reduction = prf(index, spec.attachment, spec.exhaustion) if prf_override is None else np.broadcast_to(
        np.asarray(prf_override, dtype=float), (paths.n_paths,)
    )
    disc = cumulative_discount(paths)
    pay_idx = np.arange(1, spec.n_payments + 1) * spec.weeks_per_period
    df = disc[:, pay_idx]
    principal = spec.face * (1.0 - reduction) * df[:, -1]
    coupons = spec.coupon_rate * spec.face / spec.pay_freq * df.sum(axis=1)
    return PayoutDistribution(
        principal_pv=principal,
        total_pv=principal + coupons,
        discount_curve=df.mean(axis=0),
        prf=np.asarray(reduction),
        measure=paths.measure,
    )


def bond_payout_paths(
    p: ModelParams,
    rp: RiskPremiums | None,
    spec: BondSpec,
    baseline=None,
    n_paths: int = 10_000,
    seed: int = 0,
) -> PayoutDistribution:
    """Per-path present values of principal and total payouts.

    Pass ``rp=None`` for the physical measure (how payouts are assessed) or
    risk premiums for the pricing measure.
    """
    paths = simulate_bond_paths(p, rp, spec, n_paths, seed)
    return payouts_from_paths(paths, spec, baseline)


@dataclass(frozen=True)
class CouponResult:
    coupon: float
    zcb: np.ndarray
    expected_discounted_prf: float
    metrics: dict

    def __float__(self) -> float:
        return self.coupon


def coupon_from_paths(q: ModelParams, paths: PathSet, spec: BondSpec, baseline=None, disable_prf=False) -> CouponResult:
    """Fair par coupon from pricing-measure paths; ``q`` carries the Q drifts."""
    zcb = zcb_curve(q, None, spec.pay_times)
    if disable_prf:
        reduction = np.zeros(paths.n_paths)
        epv = 0.0
    else:
        levels = paths.mortality_paths + baseline_weeks(baseline, paths.n_steps)
        reduction = prf(mortality_index(levels, spec), spec.attachment, spec.exhaustion)
        epv = float(np.mean(reduction * mc_discount_factors(paths, spec.term)))
    c = (1.0 - zcb[-1] + epv) / (zcb.sum() / spec.pay_freq)
    return CouponResult(float(c), zcb, epv, loss_metrics(reduction))


def fair_coupon_details(p, rp, spec, baseline=None, n_paths=10_000, seed=0, disable_prf=False) -> CouponResult:
    q = to_pricing(p, rp)
    paths = simulate_bond_paths(q, None, spec, n_paths, seed)
    return coupon_from_paths(q, paths, spec, baseline, disable_prf)


def fair_coupon(p, rp, spec, baseline=None, n_paths=10_000, seed=0) -> float:
    """Coupon that makes the bond trade at par under the pricing measure."""
    return fair_coupon_details(p, rp, spec, baseline, n_paths, seed).coupon


def coupon_surface(q: ModelParams, paths: PathSet, spec: BondSpec, attachments, exhaustions, baseline=None) -> np.ndarray:
    """Fair coupons on an attachment x exhaustion grid from one batch of Q paths.

    Cells with exhaustion <= attachment are NaN.
    """
    zcb = zcb_curve(q, None, spec.pay_times)
    annuity = zcb.sum() / spec.pay_freq
    levels = paths.mortality_paths + baseline_weeks(baseline, paths.n_steps)
    index = mortality_index(levels, spec).values
    df_T = mc_discount_factors(paths, spec.term)
    out = np.full((len(attachments), len(exhaustions)), np.nan)
    for i, a in enumerate(attachments):
        for j, b in enumerate(exhaustions):
            if b > a:
                epv = np.mean(prf(index, a, b) * df_T)
                out[i, j] = (1.0 - zcb[-1] + epv) / annuity
    return out


def forward_discount_mc(paths: PathSet, start: float, end: float) -> float:
    """Monte Carlo E[exp(-int_start^end r)] from time-0 paths.

    A stand-in for the time-t bond value: it averages over all paths rather
    than conditioning on the information available at ``start``.
    """
    i0, i1 = _grid_index(paths, start), _grid_index(paths, end)
    if i1 < i0:
        raise ValueError("end must not precede start")
    r = paths.rate_paths[:, i0 : i1 + 1] * paths.rate_scale
    if i1 == i0:
        return 1.0
    return float(np.mean(np.exp(-np.trapezoid(r, dx=paths.dt, axis=1))))


def risk_measures(samples, levels=(0.05, 0.01)) -> dict:
    """Mean, std, lower-tail VaR (linear interpolation) and CTE per level.

    CTE_q averages the samples at or below VaR_q.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 100:
        raise InsufficientDataError("risk measures need at least 100 samples")
    out = {"mean": float(x.mean()), "std": float(x.std(ddof=1))}
    for q in levels:
        var = float(np.quantile(x, q, method="linear"))
        out[f"var_{q:g}"] = var
        out[f"cte_{q:g}"] = float(x[x <= var].mean())
    return out
