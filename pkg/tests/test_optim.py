import math

import numpy as np
import pytest

from seqadapt import optim as op
from seqadapt.autodiff import Tensor


def one_param(value=0.5):
    return [("w", Tensor(np.full(3, value)))]


class TestAdamStep:
    def test_zero_gradients_are_a_noop(self):
        partition = one_param()
        before = partition[0][1].values.copy()
        state = op.AdamState()
        for _ in range(5):
            op.adam_step(partition, {"w": np.zeros(3)}, state, lr=0.01)
        assert np.array_equal(partition[0][1].values, before)

    def test_one_step_constant_gradient_closed_form(self):
        p = Tensor(np.array([1.0]))
        state = op.AdamState()
        op.adam_step([("w", p)], {"w": np.ones(1)}, state, lr=0.001)
        # bias-corrected m_hat = v_hat = 1 -> delta = -lr / (1 + eps)
        expected = 1.0 - 0.001 / (1.0 + op.EPS)
        assert abs(p.values[0] - expected) < 1e-15
        assert abs((1.0 - p.values[0]) - 0.001) < 1e-9

    def test_nan_gradient_names_block(self):
        with pytest.raises(op.NanGradientError, match="'w_q'"):
            op.adam_step([("w_q", Tensor(np.zeros(2)))],
                         {"w_q": np.array([np.nan, 0.0])},
                         op.AdamState(), lr=0.01)

    def test_step_magnitude_bounds(self):
        rng = np.random.default_rng(0)
        p = Tensor(rng.standard_normal(8))
        state = op.AdamState()
        lr = 0.01
        bound = lr / (1.0 - op.BETA1)
        for _ in range(50):
            before = p.values.copy()
            op.adam_step([("w", p)], {"w": rng.standard_normal(8) * 10},
                         state, lr)
            assert (np.abs(p.values - before) <= bound + 1e-12).all()

    def test_steady_constant_gradient_step_approaches_lr(self):
        p = Tensor(np.array([0.0]))
        state = op.AdamState()
        lr = 0.001
        for _ in range(200):
            before = p.values[0]
            op.adam_step([("w", p)], {"w": np.array([2.5])}, state, lr)
        assert abs(abs(p.values[0] - before) - lr) < 1e-6


def naive_dual_adam(g_label_seq, g_rev_seq, lam_seq, lr):
    """Loop oracle for the dual-moment feature update."""
    theta = 0.0
    ml = vl = md = vd = 0.0
    for t, (gl, gd, lam) in enumerate(zip(g_label_seq, g_rev_seq, lam_seq),
                                      start=1):
        ml = op.BETA1 * ml + (1 - op.BETA1) * gl
        vl = op.BETA2 * vl + (1 - op.BETA2) * gl * gl
        md = op.BETA1 * md + (1 - op.BETA1) * gd
        vd = op.BETA2 * vd + (1 - op.BETA2) * gd * gd
        c1 = 1 - op.BETA1 ** t
        c2 = 1 - op.BETA2 ** t
        delta = (ml / c1) / (math.sqrt(vl / c2) + op.EPS)
        if lam != 0.0:
            delta += lam * ((md / c1) / (math.sqrt(vd / c2) + op.EPS))
        theta -= lr * delta
    return theta


class TestFeatureAdamStep:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        gl = rng.standard_normal(20)
        gd = rng.standard_normal(20)
        lams = np.linspace(0.0, 0.2, 20)
        p = Tensor(np.array([0.0]))
        state = op.FeatureAdamState()
        for t in range(20):
            op.adam_step_feature([("w", p)], {"w": gl[t:t + 1]},
                                 {"w": gd[t:t + 1]}, lams[t], state, 0.01)
        expected = naive_dual_adam(gl, gd, lams, 0.01)
        assert abs(p.values[0] - expected) < 1e-15

    def test_lambda_zero_equals_plain_adam_bitwise(self):
        rng = np.random.default_rng(2)
        grads = [rng.standard_normal(4) for _ in range(10)]
        domain = [rng.standard_normal(4) for _ in range(10)]
        a = Tensor(np.ones(4))
        b = Tensor(np.ones(4))
        sa, sb = op.AdamState(), op.FeatureAdamState()
        for g, gd in zip(grads, domain):
            op.adam_step([("w", a)], {"w": g}, sa, 0.003)
            op.adam_step_feature([("w", b)], {"w": g}, {"w": gd}, 0.0, sb,
                                 0.003)
        assert np.array_equal(a.values, b.values)

    def test_nan_domain_gradient_detected(self):
        with pytest.raises(op.NanGradientError, match="'pos'"):
            op.adam_step_feature([("pos", Tensor(np.zeros(2)))],
                                 {"pos": np.zeros(2)},
                                 {"pos": np.array([np.inf, 0.0])},
                                 0.1, op.FeatureAdamState(), 0.01)


class TestLambdaSchedule:
    def test_zero_progress(self):
        assert op.lambda_at(0.0) == 0.0

    def test_midpoint_closed_form(self):
        got = op.lambda_at(0.5, lambda_max=0.2, gamma=10.0)
        assert abs(got - 0.2 * math.tanh(2.5)) < 1e-15
        assert abs(got - 0.197320) < 1e-5

    def test_endpoint_closed_form(self):
        got = op.lambda_at(1.0, lambda_max=0.2, gamma=10.0)
        assert abs(got - 0.2 * math.tanh(5.0)) < 1e-15
        assert abs(got - 0.199982) < 1e-5
        assert abs(got - 0.2) < 1e-4

    def test_out_of_range_progress(self):
        for bad in (-0.1, 1.1):
            with pytest.raises(ValueError):
                op.lambda_at(bad)

    def test_monotone_and_saturating(self):
        grid = [op.lambda_at(p, 0.2, 10.0) for p in np.linspace(0, 1, 101)]
        assert all(b >= a for a, b in zip(grid, grid[1:]))
        assert abs(grid[-1] - 0.2) < 2e-5
        assert grid[0] == 0.0


class TestLrSchedule:
    def test_epoch_zero(self):
        assert op.lr_at(0) == 0.001

    def test_epoch_one(self):
        assert abs(op.lr_at(1) - 0.00099) < 1e-18

    def test_epoch_250(self):
        assert abs(op.lr_at(250) - 0.001 * 0.99 ** 250) < 1e-18
        assert abs(op.lr_at(250) - 8.106e-5) < 1e-8

    def test_strictly_decreasing_positive(self):
        values = [op.lr_at(e, 0.001, 0.99) for e in range(300)]
        assert all(v > 0 for v in values)
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_negative_epoch_rejected(self):
        with pytest.raises(ValueError):
            op.lr_at(-1)


def test_schedules_validation():
    op.Schedules(epochs=0)   # degenerate but allowed: empty training
    with pytest.raises(ValueError):
        op.Schedules(epochs=-1)
    with pytest.raises(ValueError):
        op.Schedules(lr_decay=0.0)
