import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socialbnn.variational import (
    GaussianParameter,
    PriorKind,
    PriorSpec,
    dlog_prior_dw,
    log_gaussian_density,
    log_prior_density,
    pathwise_gradients,
    sample_parameter,
    sigma_of_rho,
)

# ln(1 + e^-3), evaluated with mpmath at 30 digits
SOFTPLUS_M3 = 0.0485873515737420587589


class TestSigmaOfRho:
    def test_zero(self):
        assert sigma_of_rho(0.0) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_init_value(self):
        assert sigma_of_rho(-3.0) == pytest.approx(SOFTPLUS_M3, rel=1e-14)

    def test_linear_asymptote(self):
        assert abs(sigma_of_rho(30.0) - 30.0) < 1e-12

    def test_no_overflow(self):
        assert sigma_of_rho(1000.0) == 1000.0
        assert 0 < sigma_of_rho(-700.0) < 1e-300

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValueError):
            sigma_of_rho(bad)

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_monotone(self, a, b):
        if a < b:
            assert sigma_of_rho(a) <= sigma_of_rho(b)
            if b - a > 1e-6:
                assert sigma_of_rho(a) < sigma_of_rho(b)

    def test_array_input(self):
        out = sigma_of_rho(np.array([0.0, -3.0]))
        np.testing.assert_allclose(out, [math.log(2), SOFTPLUS_M3], rtol=1e-14)


class TestSampleParameter:
    def test_zero_noise_returns_mean(self):
        assert sample_parameter(GaussianParameter(0.5, -3.0), 0.0) == 0.5

    def test_unit_noise_returns_sigma(self):
        assert sample_parameter(GaussianParameter(0.0, 0.0), 1.0) == pytest.approx(math.log(2), abs=1e-15)

    def test_two_sigma(self):
        assert sample_parameter(GaussianParameter(0.1, -3.0), 2.0) == pytest.approx(0.1971747031474841, rel=1e-13)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-5, 5))
    def test_deterministic(self, mu, rho, eps):
        p = GaussianParameter(mu, rho)
        assert sample_parameter(p, eps) == sample_parameter(p, eps)

    def test_non_finite_parameter(self):
        with pytest.raises(ValueError):
            GaussianParameter(math.nan, 0.0)


class TestDensities:
    def test_standard_normal_mode(self):
        assert log_gaussian_density(0.0, 0.0, 1.0) == pytest.approx(-0.9189385332046727, abs=1e-15)

    def test_one_unit_away(self):
        assert log_gaussian_density(1.0, 0.0, 1.0) == pytest.approx(-1.4189385332046727, abs=1e-15)

    def test_wider(self):
        assert log_gaussian_density(0.0, 0.0, 2.0) == pytest.approx(-1.612085713764618, abs=1e-14)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ValueError):
            log_gaussian_density(0.0, 0.0, sigma)

    def test_single_gaussian_prior(self):
        prior = PriorSpec()
        assert log_prior_density(0.0, prior) == pytest.approx(-0.9189385332046727, abs=1e-15)
        assert log_prior_density(0.3, prior) == pytest.approx(-0.9639385332046727, abs=1e-15)

    @given(st.floats(-20, 20))
    def test_degenerate_mixture(self, x):
        mix = PriorSpec(PriorKind.SCALE_MIXTURE, sigma1=0.7, sigma2=0.01, pi=1.0)
        single = PriorSpec(PriorKind.SINGLE_GAUSSIAN, sigma1=0.7)
        assert log_prior_density(x, mix) == log_prior_density(x, single)

    def test_mixture_matches_direct_sum(self):
        prior = PriorSpec(PriorKind.SCALE_MIXTURE, sigma1=1.0, sigma2=0.1, pi=0.3)
        for x in (-1.2, 0.0, 0.05, 2.5):
            direct = math.log(
                0.3 * math.exp(log_gaussian_density(x, 0, 1.0)) + 0.7 * math.exp(log_gaussian_density(x, 0, 0.1))
            )
            assert log_prior_density(x, prior) == pytest.approx(direct, rel=1e-12)

    def test_mixture_stable_far_out(self):
        prior = PriorSpec(PriorKind.SCALE_MIXTURE, sigma1=1.0, sigma2=1e-3, pi=0.5)
        assert np.isfinite(log_prior_density(50.0, prior))

    @pytest.mark.parametrize("kind", list(PriorKind))
    def test_prior_derivative_fd(self, kind):
        prior = PriorSpec(kind, sigma1=0.8, sigma2=0.05, pi=0.4)
        h = 1e-6
        for x in (-0.7, -0.02, 0.0, 0.03, 1.1):
            fd = (log_prior_density(x + h, prior) - log_prior_density(x - h, prior)) / (2 * h)
            assert dlog_prior_dw(x, prior) == pytest.approx(fd, rel=1e-5, abs=1e-6)

    def test_invalid_prior(self):
        with pytest.raises(ValueError):
            PriorSpec(sigma1=0.0)
        with pytest.raises(ValueError):
            PriorSpec(PriorKind.SCALE_MIXTURE, pi=1.5)

    @given(st.floats(-5, 5))
    def test_posterior_equals_prior_pointwise(self, w):
        # q = N(0, 1) and p = N(0, 1) agree for every w
        assert log_gaussian_density(w, 0.0, 1.0) == log_prior_density(w, PriorSpec(sigma1=1.0))


class TestPathwiseGradients:
    def test_noise_free_path(self):
        assert pathwise_gradients(GaussianParameter(0.3, -1.0), 0.0, 1.0) == (1.0, 0.0)

    def test_sigmoid_half(self):
        assert pathwise_gradients(GaussianParameter(0.0, 0.0), 1.0, 1.0) == (1.0, 0.5)

    @settings(max_examples=50)
    @given(st.floats(-2, 2), st.floats(-6, 3), st.floats(-3, 3))
    def test_matches_finite_differences(self, mu, rho, eps):
        # loss(w) = sin(w) + w^2; central differences in mu and rho with the draw held fixed
        def loss(m, r):
            w = sample_parameter(GaussianParameter(m, r), eps)
            return math.sin(w) + w * w

        w = sample_parameter(GaussianParameter(mu, rho), eps)
        d_mu, d_rho = pathwise_gradients(GaussianParameter(mu, rho), eps, math.cos(w) + 2 * w)
        h = 1e-6
        fd_mu = (loss(mu + h, rho) - loss(mu - h, rho)) / (2 * h)
        fd_rho = (loss(mu, rho + h) - loss(mu, rho - h)) / (2 * h)
        assert d_mu == pytest.approx(fd_mu, rel=1e-5, abs=1e-8)
        assert d_rho == pytest.approx(fd_rho, rel=1e-5, abs=1e-8)
