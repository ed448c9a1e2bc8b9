import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsa.errors import ConfigError, NonFiniteGradientError
from dsa.optim import Adadelta, Adam, HalvingSchedule, he_init_scaled, lr_halving_update, make_optimizer
from dsa.tensor import Tensor


def scalar_param(value=0.0):
    return Tensor(np.array([value]), requires_grad=True)


def step_with(opt, p, g):
    before = p.data.copy()
    p.grad = np.asarray(g, dtype=float).reshape(p.shape)
    opt.step()
    return p.data - before


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = Tensor(np.random.default_rng(0).normal(size=(3, 2)), requires_grad=True)
        opt = Adam([p])
        before = p.data.copy()
        for _ in range(5):
            p.grad = np.zeros_like(p.data)
            opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_first_step(self):
        p = scalar_param()
        delta = step_with(Adam([p], lr=1e-3), p, [1.0])
        # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        assert delta[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)

    def test_second_identical_step_not_larger(self):
        p = scalar_param()
        opt = Adam([p], lr=1e-3)
        d1 = step_with(opt, p, [1.0])
        d2 = step_with(opt, p, [1.0])
        assert abs(d2[0]) <= abs(d1[0]) * (1 + 1e-6)

    def test_weight_decay_adds_to_gradient(self):
        p, q = scalar_param(2.0), scalar_param(2.0)
        a = Adam([p], lr=0.1, weight_decay=0.5)
        b = Adam([q], lr=0.1)
        step_with(a, p, [0.3])
        step_with(b, q, [0.3 + 0.5 * 2.0])
        assert p.data[0] == q.data[0]

    def test_lr_multiplier_scales_step(self):
        p = scalar_param()
        opt = Adam([p], lr=1e-3)
        opt.lr_multiplier = 0.25
        assert step_with(opt, p, [1.0])[0] == pytest.approx(-0.25e-3, rel=1e-7)

    def test_non_finite_gradient_aborts_whole_step(self):
        p, q = scalar_param(1.0), scalar_param(1.0)
        opt = Adam([p, q])
        p.grad = np.array([0.5])
        q.grad = np.array([np.nan])
        with pytest.raises(NonFiniteGradientError):
            opt.step()
        assert p.data[0] == 1.0 and q.data[0] == 1.0
        assert opt.step_count == 0

    def test_missing_gradient_skipped(self):
        p = scalar_param(1.0)
        Adam([p]).step()
        assert p.data[0] == 1.0

    def test_invalid_hyperparameters(self):
        with pytest.raises(ConfigError):
            Adam([scalar_param()], lr=0.0)
        with pytest.raises(ConfigError):
            Adam([scalar_param()], weight_decay=-1.0)


class TestAdadelta:
    def test_zero_gradient_no_change(self):
        p = scalar_param(3.0)
        opt = Adadelta([p])
        for _ in range(5):
            step_with(opt, p, [0.0])
        assert p.data[0] == 3.0

    def test_first_step_hand_value(self):
        p = scalar_param()
        delta = step_with(Adadelta([p]), p, [1.0])
        assert delta[0] == pytest.approx(-0.0031622618488986629, rel=1e-12)
        assert delta[0] == pytest.approx(-math.sqrt(1e-6 / (0.1 + 1e-6)), rel=1e-12)

    def test_first_step_scaled_by_multiplier(self):
        p = scalar_param()
        opt = Adadelta([p])
        opt.lr_multiplier = 0.5
        assert step_with(opt, p, [1.0])[0] == pytest.approx(-0.5 * 0.0031622618488986629, rel=1e-12)

    def test_update_magnitude_invariant_to_gradient_scale(self):
        last = []
        for scale in (1.0, 10.0):
            p = scalar_param()
            opt = Adadelta([p])
            for _ in range(100):
                d = step_with(opt, p, [scale])
            last.append(abs(d[0]))
        assert last[1] == pytest.approx(last[0], rel=0.05)


@pytest.mark.parametrize("name", ["adam", "adadelta"])
def test_convex_quadratic_decreases(name):
    A = np.array([1.0, 4.0, 0.5])
    theta = Tensor(np.array([5.0, -4.0, 6.0]), requires_grad=True)
    opt = make_optimizer(name, [theta], None, 0.0)
    losses = []
    for _ in range(1000):
        losses.append(0.5 * float(np.sum(A * theta.data**2)))
        theta.grad = A * theta.data
        opt.step()
    tail = np.array(losses[10:])
    assert np.all(np.diff(tail) < 0)


def test_make_optimizer_defaults_and_unknown():
    assert make_optimizer("adam", [scalar_param()], None, 0.0).lr == 1e-3
    assert make_optimizer("Adadelta", [scalar_param()], None, 0.0).lr == 1.0
    with pytest.raises(ConfigError):
        make_optimizer("sgd", [scalar_param()], None, 0.0)


class TestHeInit:
    def test_unit_rate_is_plain_he(self):
        a = he_init_scaled((1000,), 50, 1.0, np.random.default_rng(0))
        b = he_init_scaled((1000,), 50, None, np.random.default_rng(0))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a, np.random.default_rng(0).standard_normal(1000) * math.sqrt(2 / 50))

    def test_empirical_std(self):
        w = he_init_scaled((100_000,), 50, 0.2, np.random.default_rng(1))
        assert w.std() == pytest.approx(0.089442719099991588, rel=0.03)

    def test_reproducible(self):
        a = he_init_scaled((4, 3), 3, 0.2, np.random.default_rng(7))
        b = he_init_scaled((4, 3), 3, 0.2, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("rate", [0.0, -0.1, 1.5])
    def test_bad_rate(self, rate):
        with pytest.raises(ConfigError):
            he_init_scaled((2,), 2, rate, np.random.default_rng(0))

    def test_bad_fan_in(self):
        with pytest.raises(ConfigError):
            he_init_scaled((2,), 0, None, np.random.default_rng(0))


class TestHalving:
    def run(self, losses, trigger):
        sched = HalvingSchedule(trigger=trigger)
        out = []
        for loss in losses:
            mult, sched = lr_halving_update(sched, loss)
            out.append((mult, sched.bad_epochs))
        return out

    def test_monotone_improvement(self):
        assert self.run([1.0, 0.9, 0.8], 2) == [(1.0, 0), (1.0, 0), (1.0, 0)]

    def test_plateau_halves_after_third(self):
        assert self.run([1.0, 1.0, 1.0], 2) == [(1.0, 0), (1.0, 1), (0.5, 0)]

    def test_boundary_is_not_improvement(self):
        assert 1.0 - 0.001 == 0.999
        assert self.run([1.0, 0.999], 2) == [(1.0, 0), (1.0, 1)]
        assert self.run([1.0, 0.9989], 2) == [(1.0, 0), (1.0, 0)]

    def test_improvement_resets_counter(self):
        out = self.run([1.0, 1.0, 0.5, 0.5, 0.5], 2)
        assert [c for _, c in out] == [0, 1, 0, 1, 0]
        assert out[-1][0] == 0.5

    def test_invalid_trigger(self):
        with pytest.raises(ConfigError):
            HalvingSchedule(trigger=0)

    @given(st.lists(st.floats(0.0, 10.0), max_size=60), st.integers(1, 6))
    def test_multiplier_power_of_two_and_non_increasing(self, losses, trigger):
        sched = HalvingSchedule(trigger=trigger)
        prev = 1.0
        for loss in losses:
            mult = sched.update(loss)
            assert mult <= prev
            assert mult == 2.0 ** -sched.halvings
            assert 0 <= sched.bad_epochs < trigger
            prev = mult
