import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from mortfrac.fracnoise import (
    BLOCK_SIZE,
    DegenerateCovarianceError,
    NoiseSpec,
    bm_matrix,
    fbm_cov,
    fgn_autocorr,
    fgn_autocov,
    fgn_matrix,
    mfbm_cov,
    simulate_fgn,
    simulate_mfbm,
    simulate_mfbm_paths,
    substream,
)

hursts = st.floats(min_value=0.05, max_value=0.95)


def brute_fgn_autocov(k, h):
    # variance of B(k+1) - B(k) increments from the fBm covariance directly
    c = lambda s, t: 0.5 * (abs(s) ** (2 * h) + abs(t) ** (2 * h) - abs(s - t) ** (2 * h))
    return c(k + 1, 1) - c(k + 1, 0) - c(k, 1) + c(k, 0)


class TestCovariance:
    @pytest.mark.parametrize("h", [0.3, 0.5, 0.7, 0.9])
    @pytest.mark.parametrize("k", [0, 1, 2, 7, 50])
    def test_autocov_matches_fbm_differences(self, h, k):
        assert fgn_autocov(k + 1, h)[k] == pytest.approx(brute_fgn_autocov(k, h), rel=1e-12, abs=1e-15)

    def test_brownian_case_is_white(self):
        acf = fgn_autocov(10, 0.5)
        assert acf[0] == 1.0
        np.testing.assert_allclose(acf[1:], 0.0, atol=1e-15)

    @given(hursts, st.floats(0.0, 10.0), st.floats(0.0, 10.0))
    def test_fbm_cov_symmetric(self, h, s, t):
        assert fbm_cov(s, t, h) == pytest.approx(fbm_cov(t, s, h))

    @given(hursts)
    def test_fbm_variance_is_power(self, h):
        assert fbm_cov(2.0, 2.0, h) == pytest.approx(2.0 ** (2 * h))

    def test_mfbm_adds_brownian_min(self):
        assert mfbm_cov(1.0, 3.0, 0.7, 0.5) == pytest.approx(0.25 * 1.0 + fbm_cov(1.0, 3.0, 0.7))

    @given(hursts, st.integers(1, 200))
    def test_autocorr_matches_autocov(self, h, k):
        assert fgn_autocorr(k, h) == pytest.approx(fgn_autocov(k + 1, h)[k], rel=1e-9, abs=1e-13)

    def test_autocorr_rejects_lag_zero(self):
        with pytest.raises(ValueError):
            fgn_autocorr(0, 0.7)

    @pytest.mark.parametrize("h", [0.6, 0.8])
    def test_long_range_sign(self, h):
        assert np.all(fgn_autocov(20, h)[1:] > 0)

    @pytest.mark.parametrize("h", [0.0, 1.0, -0.2, 1.5])
    def test_rejects_hurst_outside_unit_interval(self, h):
        with pytest.raises(ValueError):
            fgn_autocov(5, h)


class TestSpec:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(hurst=0.7, alpha=-1.0), dict(hurst=0.7, n_steps=0), dict(hurst=0.7, horizon=0.0), dict(hurst=1.2)],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            NoiseSpec(**kwargs)

    def test_dt(self):
        assert NoiseSpec(0.7, n_steps=52, horizon=2.0).dt == pytest.approx(2 / 52)


class TestSampling:
    def test_fgn_shape_and_scale(self):
        spec = NoiseSpec(0.75, n_steps=64, horizon=64 / 52, seed=5)
        path = simulate_fgn(spec)
        assert path.values.shape == (64,)
        assert path.times.shape == (64,)

    def test_mfbm_starts_at_zero(self):
        path = simulate_mfbm(NoiseSpec(0.7, alpha=0.4, n_steps=30, seed=2))
        assert path.values[0] == 0.0
        assert path.values.size == 31

    def test_same_seed_same_paths(self):
        a = fgn_matrix(50, 40, 0.02, 0.8, seed=9)
        b = fgn_matrix(50, 40, 0.02, 0.8, seed=9)
        assert np.array_equal(a, b)

    def test_seed_changes_paths(self):
        assert not np.array_equal(fgn_matrix(5, 40, 0.02, 0.8, 1), fgn_matrix(5, 40, 0.02, 0.8, 2))

    def test_prefix_property(self):
        # a smaller run is the leading rows of a larger one
        small = fgn_matrix(BLOCK_SIZE + 7, 16, 0.1, 0.7, seed=4)
        big = fgn_matrix(2 * BLOCK_SIZE + 3, 16, 0.1, 0.7, seed=4)
        assert np.array_equal(small, big[: small.shape[0]])

    def test_components_are_independent_streams(self):
        a = substream(3, "W1", 0).standard_normal(4)
        b = substream(3, "W2", 0).standard_normal(4)
        assert not np.array_equal(a, b)

    def test_bm_variance(self):
        x = bm_matrix(20000, 4, 0.25, seed=1)
        assert x.var() == pytest.approx(0.25, rel=0.03)

    @pytest.mark.parametrize("h", [0.3, 0.6, 0.9])
    def test_sample_variance_scales_with_dt(self, h):
        dt = 1 / 52
        x = fgn_matrix(4000, 32, dt, h, seed=12)
        assert x.var() == pytest.approx(dt ** (2 * h), rel=0.05)

    def test_cholesky_and_circulant_give_same_law(self):
        a = fgn_matrix(3000, 20, 0.1, 0.8, seed=1, method="circulant").sum(axis=1)
        b = fgn_matrix(3000, 20, 0.1, 0.8, seed=2, method="cholesky").sum(axis=1)
        assert stats.ks_2samp(a, b).pvalue > 0.01

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            fgn_matrix(2, 8, 0.1, 0.7, 0, method="wavelet")

    def test_mfbm_paths_variance(self):
        spec = NoiseSpec(0.7, alpha=0.5, n_steps=10, horizon=1.0, seed=8)
        paths = simulate_mfbm_paths(spec, 20000)
        assert paths[:, -1].var() == pytest.approx(mfbm_cov(1.0, 1.0, 0.7, 0.5), rel=0.05)

    def test_degenerate_error_is_arithmetic(self):
        assert issubclass(DegenerateCovarianceError, ArithmeticError)
