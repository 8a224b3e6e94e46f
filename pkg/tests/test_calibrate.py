import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mortfrac.calibrate import (
    GAMMA2_GRID,
    CalibrationResult,
    InfeasibleError,
    MarketQuote,
    NoBracketError,
    calibrate_attachment,
    calibrate_exhaustion,
    calibrate_gamma1,
    calibrate_gamma2,
    calibrate_pricing,
    conditional_prf_mean,
    coupon_grid,
    simulate_index,
)
from mortfrac.model import ModelParams, RiskPremiums
from mortfrac.pricing import BondSpec, InsufficientDataError, fair_coupon_details, prf, zcb_curve

SPEC = BondSpec(attachment=0.0060, exhaustion=0.0065)


def index_matrix(n=10_000, k=5, seed=0):
    return np.random.default_rng(seed).gamma(2.0, 1.0, size=(n, k))


class TestQuote:
    def test_defaults(self):
        q = MarketQuote()
        assert (q.prob_first_loss, q.expected_loss, q.coupon_obs, q.term) == (0.0106, 0.0075, 0.03, 5.0)

    def test_el_above_pfl_rejected(self):
        with pytest.raises(ValueError):
            MarketQuote(prob_first_loss=0.01, expected_loss=0.02)


class TestGamma1:
    def test_recovers_known_premium(self, fitted):
        target = zcb_curve(fitted, RiskPremiums(gamma1=2.0), [5.0])[0]
        quote = MarketQuote(target_yield=target ** (-1 / 5) - 1)
        assert calibrate_gamma1(fitted, quote) == pytest.approx(2.0, abs=1e-8)

    def test_default_quote(self, fitted):
        g = calibrate_gamma1(fitted, MarketQuote())
        assert zcb_curve(fitted, RiskPremiums(gamma1=g), [5.0])[0] == pytest.approx(1.0257**-5, rel=1e-10)

    def test_no_bracket(self, fitted):
        with pytest.raises(NoBracketError):
            calibrate_gamma1(fitted, MarketQuote(target_yield=0.9))


class TestAttachmentExhaustion:
    def test_pooled_is_quantile(self):
        x = index_matrix()
        assert calibrate_attachment(x, 0.05) == pytest.approx(np.quantile(x, 0.95))

    def test_path_max_hits_target(self):
        x = index_matrix()
        a = calibrate_attachment(x, 0.02, rule="path_max")
        assert (x.max(axis=1) > a).mean() == pytest.approx(0.02, abs=2e-4)

    def test_needs_enough_paths(self):
        with pytest.raises(InsufficientDataError):
            calibrate_attachment(index_matrix(n=500), 0.05)

    @pytest.mark.parametrize("kwargs", [dict(pfl=0.0), dict(pfl=1.5), dict(pfl=0.1, rule="median")])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            calibrate_attachment(index_matrix(), **kwargs)

    @given(st.floats(0.1, 0.9))
    def test_exhaustion_hits_conditional_target(self, ratio):
        x = index_matrix(seed=1)
        a = calibrate_attachment(x, 0.05, rule="path_max")
        b = calibrate_exhaustion(x, a, ratio * 0.05, 0.05)
        assert b > a
        assert conditional_prf_mean(x, a, b) == pytest.approx(ratio, abs=1e-6)

    def test_conditional_mean_decreases_in_b(self):
        x = index_matrix(seed=2)
        a = np.quantile(x, 0.9)
        vals = [conditional_prf_mean(x, a, a + w) for w in (0.1, 0.5, 1.0, 3.0)]
        assert np.all(np.diff(vals) < 0)

    def test_el_above_pfl_infeasible(self):
        with pytest.raises(InfeasibleError):
            calibrate_exhaustion(index_matrix(), 5.0, 0.2, 0.1)

    def test_nothing_attaches(self):
        with pytest.raises(InfeasibleError):
            calibrate_exhaustion(index_matrix(), 1e6, 0.01, 0.02)

    def test_pinned_at_bound_warns(self, caplog):
        x = index_matrix(seed=3)
        a = calibrate_attachment(x, 0.05, rule="path_max")
        b = calibrate_exhaustion(x, a, 0.0499, 0.05, upper=a * 1.0001)
        assert b == pytest.approx(a * 1.0001)
        assert "pinned" in caplog.text


@pytest.fixture(scope="module")
def grid():
    p = ModelParams()
    rp = RiskPremiums(gamma1=3.8701)
    gammas = np.array([0.0, 0.5, 1.062, 1.5])
    return p, rp, gammas, coupon_grid(p, rp, SPEC, None, 3000, 4, gammas)


class TestGamma2:
    def test_grid_matches_direct_pricing(self, grid):
        p, rp, gammas, coupons = grid
        for g, c in zip(gammas, coupons):
            direct = fair_coupon_details(p, RiskPremiums(rp.gamma1, g), SPEC, None, 3000, 4).coupon
            assert c == pytest.approx(direct, rel=1e-10)

    def test_coupon_increases_with_mortality_premium(self, grid):
        assert np.all(np.diff(grid[3]) >= 0)

    def test_annual_max_rule(self):
        p, rp = ModelParams(), RiskPremiums(gamma1=3.8701)
        spec = SPEC.with_(index_rule="annual_max")
        got = coupon_grid(p, rp, spec, None, 1500, 2, [0.7])[0]
        assert got == pytest.approx(fair_coupon_details(p, RiskPremiums(rp.gamma1, 0.7), spec, None, 1500, 2).coupon, rel=1e-10)

    def test_boundary_flag(self):
        p, rp = ModelParams(), RiskPremiums(gamma1=3.8701)
        search = calibrate_gamma2(p, rp, SPEC, MarketQuote(coupon_obs=0.0), None, 1500, 0, np.array([0.0, 0.1, 0.2]))
        assert search.at_boundary and search.gamma2 == 0.0

    def test_default_grid(self):
        assert GAMMA2_GRID[0] == 0.0 and GAMMA2_GRID[-1] == 2.0 and GAMMA2_GRID.size == 2001


class TestPipeline:
    def test_round_trip(self, fitted):
        g1, g2 = 3.8701, 0.8
        idx, _ = simulate_index(fitted, None, SPEC, None, 10_000, 101)
        r = prf(idx, SPEC.attachment, SPEC.exhaustion)
        coupon = fair_coupon_details(fitted, RiskPremiums(g1, g2), SPEC, None, 10_000, 101).coupon
        quote = MarketQuote(prob_first_loss=float((r > 0).mean()), expected_loss=float(r.mean()), coupon_obs=coupon)
        res = calibrate_pricing(fitted, quote, SPEC, None, 10_000, 101, "path_max", "physical", gamma1=g1)
        assert isinstance(res, CalibrationResult)
        assert res.attachment == pytest.approx(SPEC.attachment, rel=0.02)
        assert res.exhaustion == pytest.approx(SPEC.exhaustion, rel=0.05)
        assert res.gamma2 == pytest.approx(g2, abs=0.15)
        assert res.risk_premiums() == RiskPremiums(g1, res.gamma2)

    def test_returns_search_on_request(self, fitted):
        res, search = calibrate_pricing(fitted, MarketQuote(), SPEC, None, 10_000, 0, grid=np.array([0.0, 1.0]), return_search=True)
        assert search.grid.size == 2 and res.gamma2 in (0.0, 1.0)
        assert res.achieved["zcb_T"] == pytest.approx(res.achieved["zcb_target"], rel=1e-9)

    def test_bad_measure(self, fitted):
        with pytest.raises(ValueError):
            calibrate_pricing(fitted, MarketQuote(), SPEC, index_measure="forward")

    def test_physical_index_ignores_premiums(self, fitted):
        a, _ = simulate_index(fitted, None, SPEC, None, 200, 0)
        b, _ = simulate_index(fitted, RiskPremiums(), SPEC, None, 200, 0)
        assert np.array_equal(a, b) and not math.isnan(a.sum())
