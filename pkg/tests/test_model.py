import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special, stats

from mortfrac.model import (
    ModelParams,
    PathSet,
    RiskPremiums,
    expected_sup_mortality,
    instantaneous_corr,
    mortality_brownian_shock,
    mu_moments,
    nu_squared,
    nu_squared_limit,
    ou_mean,
    prob_rate_nonneg,
    q_drift_levels,
    rt_moments,
    simulate_bivariate,
    simulate_noise_parts,
    simulate_short_rate,
    tail_bounds,
    to_pricing,
)


def brute_nu_squared(alpha, h, theta, sigma, t):
    """Independent oracle: the double integral evaluated with dblquad."""
    bm = alpha**2 * integrate.quad(lambda s: math.exp(-2 * theta * (t - s)), 0, t)[0]
    kernel = lambda v, u: math.exp(-theta * (2 * t - u - v)) * (u - v) ** (2 * h - 2)
    frac = 2 * h * (2 * h - 1) * integrate.dblquad(kernel, 0, t, 0, lambda u: u, epsabs=1e-10, epsrel=1e-9)[0]
    return sigma**2 * (bm + frac)


class TestParams:
    def test_defaults_are_reference_fit(self, fitted):
        assert (fitted.h1, fitted.theta2, fitted.rho) == (0.85957, 1.17364, -0.29265)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ModelParams(sigma1=math.nan)

    def test_rejects_non_finite_premium(self):
        with pytest.raises(ValueError):
            RiskPremiums(gamma1=math.inf)

    def test_q_drift_levels(self, fitted):
        rp = RiskPremiums(gamma1=3.8701, gamma2=1.062)
        m1q, m2q = q_drift_levels(fitted, rp)
        assert m1q == pytest.approx(2.26377 + 0.24815 * 1.24565 * 3.8701)
        expected = 0.00068 + 0.32636 * 0.00286 * (-0.29265 * 3.8701 + math.sqrt(1 - 0.29265**2) * 1.062)
        assert m2q == pytest.approx(expected)

    def test_to_pricing_without_premiums_is_identity(self, fitted):
        assert to_pricing(fitted, None) is fitted


class TestMoments:
    def test_ou_mean_endpoints(self):
        assert ou_mean(2.0, 0.5, 1.0, 0.0) == pytest.approx(1.0)
        assert ou_mean(2.0, 0.5, 1.0, 200.0) == pytest.approx(4.0)

    def test_time_zero(self, fitted):
        assert rt_moments(fitted, 0.0) == (pytest.approx(fitted.r0), 0.0)

    def test_double_integral_oracle(self):
        assert nu_squared(0.0, 0.7, 1.0, 1.0, 1.0) == pytest.approx(brute_nu_squared(0.0, 0.7, 1.0, 1.0, 1.0), rel=1e-7)

    @pytest.mark.parametrize("alpha,h,theta,sigma,t", [(0.25, 0.86, 0.54, 1.25, 5.0), (0.33, 0.78, 1.17, 0.003, 0.5), (0.0, 0.95, 2.0, 1.0, 3.0)])
    def test_quad_and_gamma_forms_agree(self, alpha, h, theta, sigma, t):
        q = nu_squared(alpha, h, theta, sigma, t, "quad")
        g = nu_squared(alpha, h, theta, sigma, t, "gamma")
        assert q == pytest.approx(g, rel=1e-8)

    @given(st.floats(0.55, 0.95), st.floats(0.2, 2.0))
    def test_variance_nondecreasing(self, h, theta):
        ts = np.linspace(0.1, 8.0, 12)
        v = [nu_squared(0.3, h, theta, 1.0, t) for t in ts]
        assert np.all(np.diff(v) >= -1e-12)

    @pytest.mark.parametrize("h", [0.6, 0.75, 0.86])
    def test_stationary_limit(self, h):
        theta = 0.5
        v = nu_squared(0.25, h, theta, 1.2, 40 / theta)
        assert v == pytest.approx(nu_squared_limit(0.25, h, theta, 1.2), rel=1e-6)

    def test_limit_formula(self):
        expected = 0.25**2 * 1.2**2 / 1.0 + 1.2**2 * special.gamma(2.4) / (2 * 0.5**1.4)
        assert nu_squared_limit(0.25, 0.7, 0.5, 1.2) == pytest.approx(expected)

    def test_brownian_case(self):
        # H = 1/2: fractional part is a second Brownian motion
        theta, t = 0.8, 2.0
        assert nu_squared(0.5, 0.5, theta, 1.0, t) == pytest.approx(1.25 * (1 - math.exp(-2 * theta * t)) / (2 * theta))

    def test_mortality_moments_use_mortality_factor(self, fitted):
        mean, var = mu_moments(fitted, 1.0)
        assert mean == pytest.approx(ou_mean(fitted.m2, fitted.theta2, fitted.mu0, 1.0))
        assert var == pytest.approx(nu_squared(fitted.alpha2, fitted.h2, fitted.theta2, fitted.sigma2, 1.0))

    def test_negative_time(self):
        with pytest.raises(ValueError):
            nu_squared(0.1, 0.7, 1.0, 1.0, -1.0)


class TestProbabilities:
    def test_zero_mean_is_half(self):
        p = ModelParams(m1=0.0, r0=0.0)
        assert prob_rate_nonneg(p, 2.0) == pytest.approx(0.5)

    def test_constant_mean(self, fitted):
        p = fitted.with_(r0=fitted.m1 / fitted.theta1)
        nu = math.sqrt(rt_moments(p, 1.0)[1])
        assert prob_rate_nonneg(p, 1.0) == pytest.approx(stats.norm.cdf(p.r0 / nu))

    def test_rejects_nonpositive_time(self, fitted):
        with pytest.raises(ValueError):
            prob_rate_nonneg(fitted, 0.0)

    def test_corr_zero_when_rho_zero(self, fitted):
        assert instantaneous_corr(fitted.with_(rho=0.0), 1 / 52) == 0.0

    def test_corr_approaches_rho(self, fitted):
        p = fitted.with_(h1=0.8, h2=0.8)
        assert instantaneous_corr(p, 1e-8) == pytest.approx(p.rho, abs=1e-3)

    def test_weekly_corr_below_rho(self, fitted):
        assert abs(instantaneous_corr(fitted, 1 / 52)) < 0.29265

    @given(st.floats(-1, 1), st.floats(1e-6, 1.0), st.floats(0.5, 0.95), st.floats(0.5, 0.95))
    def test_corr_bounded_by_rho(self, rho, dt, h1, h2):
        p = ModelParams(rho=rho, h1=h1, h2=h2)
        assert abs(instantaneous_corr(p, dt)) <= abs(rho) + 1e-15

    def test_tail_bounds_at_zero(self, fitted):
        tb = tail_bounds(fitted, 5.0, 0.0, 0.01)
        assert tb.upper == 1.0 and tb.lower == pytest.approx(1.0)

    @given(st.floats(0.0, 0.1))
    def test_tail_bounds_are_probabilities(self, a):
        tb = tail_bounds(ModelParams(), 5.0, a, 0.0)
        assert 0 <= tb.lower <= 1 and 0 <= tb.upper <= 1

    def test_tail_bounds_reject_negative(self, fitted):
        with pytest.raises(ValueError):
            tail_bounds(fitted, 5.0, -0.1, 0.0)


class TestSimulation:
    def test_shapes_and_start(self, fitted):
        ps = simulate_bivariate(fitted, None, 10, 52, 1.0, 0)
        assert isinstance(ps, PathSet)
        assert ps.rate_paths.shape == (10, 53)
        np.testing.assert_allclose(ps.rate_paths[:, 0], fitted.r0)
        np.testing.assert_allclose(ps.mortality_paths[:, 0], fitted.mu0)
        assert ps.times[-1] == pytest.approx(1.0)

    def test_measure_change_invariance(self, fitted):
        rp = RiskPremiums(gamma1=3.87, gamma2=1.06)
        m1q, m2q = q_drift_levels(fitted, rp)
        a = simulate_bivariate(fitted, rp, 50, 52, 1.0, 7)
        b = simulate_bivariate(fitted.with_(m1=m1q, m2=m2q), None, 50, 52, 1.0, 7)
        assert np.array_equal(a.rate_paths, b.rate_paths)
        assert np.array_equal(a.mortality_paths, b.mortality_paths)

    @pytest.mark.parametrize("rho", [1.0, -1.0])
    def test_perfect_correlation_of_shocks(self, rho):
        rng = np.random.default_rng(0)
        dw1, dw2 = rng.standard_normal((2, 500))
        shock = mortality_brownian_shock(dw1, dw2, rho)
        assert np.corrcoef(dw1, shock)[0, 1] == pytest.approx(rho, abs=1e-12)

    def test_short_rate_matches_bivariate(self, fitted):
        r = simulate_short_rate(fitted, 30, 52, 1.0, 4)
        assert np.array_equal(r, simulate_bivariate(fitted, None, 30, 52, 1.0, 4).rate_paths)

    def test_gaussian_marginal(self, fitted):
        r = simulate_short_rate(fitted, 10_000, 260, 5.0, 2)[:, -1]
        mean, var = rt_moments(fitted, 5.0)
        z = (r - mean) / math.sqrt(var)
        d = stats.kstest(z, "norm").statistic
        assert d < 1.63 / math.sqrt(z.size)  # 1% critical value

    def test_variance_of_mortality(self, fitted):
        mu = simulate_bivariate(fitted, None, 8000, 104, 2.0, 5).mortality_paths[:, -1]
        assert mu.var() == pytest.approx(mu_moments(fitted, 2.0)[1], rel=0.05)

    def test_threads_do_not_change_paths(self, fitted, monkeypatch):
        monkeypatch.setenv("MORTFRAC_THREADS", "1")
        a = simulate_bivariate(fitted, None, 2500, 20, 1.0, 3)
        monkeypatch.setenv("MORTFRAC_THREADS", "4")
        b = simulate_bivariate(fitted, None, 2500, 20, 1.0, 3)
        assert np.array_equal(a.rate_paths, b.rate_paths)
        assert np.array_equal(a.mortality_paths, b.mortality_paths)

    def test_hurst_half_supported(self, fitted):
        p = fitted.with_(h1=0.5, h2=0.5)
        r = simulate_short_rate(p, 8000, 52, 1.0, 1)[:, -1]
        assert r.var() == pytest.approx(rt_moments(p, 1.0)[1], rel=0.05)

    def test_noise_parts_ignore_drift(self, fitted):
        a = simulate_noise_parts(fitted, 20, 10, 1.0, 0)
        b = simulate_noise_parts(fitted.with_(m1=9.0, m2=0.5, r0=1.0), 20, 10, 1.0, 0)
        assert np.array_equal(a.rate, b.rate) and np.array_equal(a.mortality, b.mortality)

    @pytest.mark.parametrize("args", [(0, 10, 1.0), (10, 0, 1.0), (10, 10, 0.0)])
    def test_invalid_sizes(self, fitted, args):
        with pytest.raises(ValueError):
            simulate_noise_parts(fitted, *args, seed=0)

    def test_expected_sup_has_small_se(self, fitted):
        mean, se = expected_sup_mortality(fitted, 1.0, n_paths=2000)
        assert mean >= fitted.mu0 and 0 < se < abs(mean) + 1e-3
