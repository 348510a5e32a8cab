import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from socialbnn.model import BayesianLinear
from socialbnn.optimizer import OptimizerConfig, SchedulerState, scheduler_update, ucb_step

RHO_HALF = math.log(math.expm1(0.5))  # softplus(RHO_HALF) = 0.5


def layer(mu=0.0, rho=RHO_HALF, shape=(1, 1)):
    return BayesianLinear(
        np.full(shape, mu), np.full(shape, rho), np.full(shape[0], mu), np.full(shape[0], rho)
    )


def grads(g_mu, g_rho, shape=(1, 1)):
    return (np.full(shape, g_mu), np.full(shape, g_rho), np.full(shape[0], g_mu), np.full(shape[0], g_rho))


def run(losses, cfg=OptimizerConfig()):
    s = SchedulerState.start(cfg)
    etas = []
    for v in losses:
        s = scheduler_update(s, v, cfg)
        etas.append(s.current_eta)
    return s, etas


class TestUcbStep:
    def test_scaled_mean_step(self):
        l = layer()
        ucb_step([l], [grads(1.0, 0.0)], 0.06)
        assert l.mu_w[0, 0] == pytest.approx(-0.03, abs=1e-15)
        assert l.rho_w[0, 0] == RHO_HALF

    def test_plain_sgd(self):
        l = layer()
        ucb_step([l], [grads(1.0, 1.0)], 0.06, ucb_enabled=False)
        assert l.mu_w[0, 0] == pytest.approx(-0.06, abs=1e-15)
        assert l.rho_w[0, 0] == pytest.approx(RHO_HALF - 0.06, abs=1e-15)

    def test_rho_step_unscaled(self):
        l = layer()
        ucb_step([l], [grads(0.0, 2.0)], 0.06)
        assert l.rho_b[0] == pytest.approx(RHO_HALF - 0.12, abs=1e-15)

    def test_zero_gradient_fixed_point(self):
        l = layer(0.37, -2.2, (3, 2))
        ref = l.copy()
        ucb_step([l], [grads(0.0, 0.0, (3, 2))], 0.06)
        assert all(np.array_equal(a, b) for a, b in zip(l.arrays(), ref.arrays()))

    def test_sigma_read_before_rho_update(self):
        # a large rho gradient must not change the sigma used for this step's mean update
        l = layer()
        ucb_step([l], [grads(1.0, 100.0)], 0.06)
        assert l.mu_w[0, 0] == pytest.approx(-0.03, abs=1e-15)

    def test_cap(self):
        l = layer()
        ucb_step([l], [grads(1.0, 0.0)], 0.06, max_mu_lr=0.01)
        assert l.mu_w[0, 0] == pytest.approx(-0.01, abs=1e-15)

    def test_non_finite_gradient_named(self):
        g = list(grads(0.0, 0.0, (2, 2)))
        g[1] = g[1].copy()
        g[1][1, 0] = np.inf
        with pytest.raises(FloatingPointError, match=r"layer 0 rho_w\(1, 0\)"):
            ucb_step([layer(shape=(2, 2))], [tuple(g)], 0.06)

    def test_misaligned(self):
        with pytest.raises(ValueError):
            ucb_step([layer(), layer()], [grads(0, 0)], 0.06)

    @given(st.floats(-8, 2), st.floats(-8, 2), st.floats(0.01, 5))
    def test_certain_weights_move_less(self, rho_a, rho_b, g):
        a, b = layer(rho=rho_a), layer(rho=rho_b)
        ucb_step([a, b], [grads(g, 0.0), grads(g, 0.0)], 0.06)
        step_a, step_b = -a.mu_w[0, 0], -b.mu_w[0, 0]
        assert step_a > 0 and step_b > 0  # always against the gradient
        if rho_a < rho_b - 1e-9:
            assert step_a < step_b


class TestScheduler:
    def test_improving(self):
        s, etas = run([1.0, 0.9, 0.8])
        assert etas == [0.06] * 3 and s.epochs_since_improvement == 0 and s.best_val_loss == 0.8

    def test_one_decay(self):
        s, etas = run([1.0, 1.0, 1.2, 1.0, 1.1, 1.0])
        assert etas[:5] == [0.06] * 5
        assert abs(etas[5] - 0.02) <= 1e-12
        assert s.epochs_since_improvement == 0

    def test_two_decays(self):
        _, etas = run([1.0] + [1.0] * 10)
        assert abs(etas[5] - 0.02) <= 1e-12
        assert abs(etas[10] - 0.006667) <= 1e-6
        assert abs(etas[10] - 0.06 / 9) <= 1e-12

    def test_epsilon(self):
        # a gain of 1e-13 is not an improvement
        s, _ = run([1.0, 1.0 - 1e-13])
        assert s.epochs_since_improvement == 1 and s.best_val_loss == 1.0

    def test_improvement_resets_window(self):
        _, etas = run([1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.6, 0.6, 0.6, 0.6])
        assert etas == [0.06] * 10

    @given(st.lists(st.floats(0, 10), max_size=60))
    def test_eta_nonincreasing(self, losses):
        _, etas = run(losses)
        assert all(b <= a for a, b in zip([0.06] + etas, etas))

    def test_config_validation(self):
        for bad in ({"eta": 0}, {"decay_factor": 1.0}, {"patience": 0}):
            with pytest.raises(ValueError):
                OptimizerConfig(**bad)
