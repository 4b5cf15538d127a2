import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from critbatch.optimizer import (
    ADABELIEF,
    ADAM,
    ALL_RULES,
    AMSBOUND,
    AMSGRAD,
    MOMENTUM,
    SGD,
    DivergenceError,
    HyperParams,
    OptimizerState,
    StopCondition,
    clamp,
    fmt,
    get_rule,
    run,
    step,
    update_preconditioner,
)
from critbatch.oracle import NoisyQuadratic, make_rng

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestClamp:
    @pytest.mark.parametrize("x, expected", [(0.5, 0.5), (-1, 0), (2, 1)])
    def test_scalar(self, x, expected):
        assert clamp(x, 0, 1) == expected

    def test_array(self):
        np.testing.assert_array_equal(clamp(np.array([-1.0, 0.5, 2.0]), 0, 1), [0, 0.5, 1])

    def test_inverted_bounds(self):
        with pytest.raises(ValueError):
            clamp(0.5, 1, 0)

    @given(x=finite, lo=finite, width=st.floats(0, 1e3))
    def test_result_in_interval(self, x, lo, width):
        y = clamp(x, lo, lo + width)
        assert lo <= y <= lo + width


class TestHyperParams:
    @pytest.mark.parametrize("kw", [dict(alpha=0), dict(alpha=1, beta=1.0),
                                    dict(alpha=1, gamma=-0.1), dict(alpha=1, epsilon=0)])
    def test_rejects_out_of_range(self, kw):
        with pytest.raises(ValueError):
            HyperParams(**kw)

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            get_rule("lion")

    def test_forced_coefficients(self):
        h = HyperParams(0.1, 0.9, 0.9)
        assert SGD.effective(h).beta == 0 and SGD.effective(h).gamma == 0
        for r in (MOMENTUM, AMSGRAD, AMSBOUND):
            assert r.effective(h).gamma == 0 and r.effective(h).beta == 0.9
        assert ADAM.effective(h) == h


class TestPreconditioner:
    def _state(self, d=2):
        return OptimizerState.initial(np.zeros(d))

    def test_sgd_identity(self):
        g = np.array([3.0, -7.0])
        h, *_ = update_preconditioner(SGD, self._state(), g, g, HyperParams(0.1))
        np.testing.assert_array_equal(h, [1.0, 1.0])

    def test_amsgrad_one_step(self):
        g = np.array([2.0, 0.0])
        h, v, v_hat, _ = update_preconditioner(AMSGRAD, self._state(), g, g, HyperParams(0.1, eta=0.999))
        np.testing.assert_allclose(v, [0.004, 0.0], rtol=1e-12)
        np.testing.assert_allclose(v_hat, [0.004, 0.0], rtol=1e-12)
        np.testing.assert_allclose(h, [0.0632455532033676, 1e-8], rtol=1e-12)

    def test_adam_first_step_bias_correction(self):
        g = np.array([2.0, -1.0])
        h, *_ = update_preconditioner(ADAM, self._state(), g, g, HyperParams(0.1, zeta=0.999, eta=0.999))
        # v = 0.001 g^2, corrected by 1 - 0.999 -> |g|
        np.testing.assert_allclose(h, [2.0, 1.0], rtol=1e-12)

    def test_adabelief_uses_deviation_from_momentum(self):
        g = np.array([2.0, 1.0])
        m = np.array([0.5, 1.0])
        _, _, _, s = update_preconditioner(ADABELIEF, self._state(), g, m, HyperParams(0.1, eta=0.9))
        np.testing.assert_allclose(s, 0.1 * (g - m) ** 2, rtol=1e-12)

    def test_amsbound_clipped_to_schedule(self):
        rule = AMSBOUND
        hyper = HyperParams(0.1, eta=0.999)
        lo, hi = rule.clip_bounds(0, 0.999)
        g = np.array([1e6, 1e-6])
        h, *_ = update_preconditioner(rule, self._state(), g, g, hyper)
        np.testing.assert_allclose(h, [1 / lo, 1 / hi], rtol=1e-12)

    def test_amsbound_schedule_converges_to_scale(self):
        lo, hi = AMSBOUND.clip_bounds(10**9, 0.999)
        assert lo < 0.1 < hi
        assert hi - lo < 1e-5

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), rule=st.sampled_from([AMSGRAD, AMSBOUND]))
    def test_monotone_rules_never_decrease(self, seed, rule):
        rng = make_rng(seed)
        hyper = HyperParams(0.01, 0.9, 0.0, eta=0.99)
        state = OptimizerState.initial(np.zeros(3))
        prev = None
        for _ in range(60):
            state = step(state, rng.standard_normal(3) * rng.uniform(0.01, 5), hyper, rule)
            if prev is not None:
                assert np.all(state.h >= prev)
            prev = state.h

    @settings(max_examples=30, deadline=None)
    @given(g=arrays(float, 4, elements=finite), rule=st.sampled_from(ALL_RULES))
    def test_floor(self, g, rule):
        state = step(OptimizerState.initial(np.zeros(4)), g, HyperParams(1e-3, 0.9, 0.9), rule)
        assert np.all(state.h >= 1e-8)


class TestStep:
    def test_sgd_is_vanilla(self):
        theta = np.array([1.0, -2.0])
        g = np.array([0.5, 0.25])
        s = step(OptimizerState.initial(theta), g, HyperParams(0.1, 0.9, 0.9), SGD)
        np.testing.assert_array_equal(s.theta, theta - 0.1 * g)

    def test_momentum_recursion(self):
        st0 = OptimizerState.initial(np.zeros(2))
        st0.m = np.array([1.0, 0.0])
        st0.step = 3
        s = step(st0, np.array([0.0, 1.0]), HyperParams(0.1, 0.9, 0.0), ADAM)
        np.testing.assert_allclose(s.m, [0.9, 0.1], rtol=1e-15)
        np.testing.assert_array_equal(s.m_hat, s.m)

    def test_first_step_bias_correction(self):
        s = step(OptimizerState.initial(np.zeros(2)), np.array([1.0, 2.0]), HyperParams(0.1, 0.5, 0.9), ADAM)
        np.testing.assert_allclose(s.m_hat, 10 * s.m, rtol=1e-14)

    def test_non_finite_gradient(self):
        with pytest.raises(DivergenceError):
            step(OptimizerState.initial(np.zeros(2)), np.array([np.nan, 0.0]), HyperParams(0.1), SGD)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_momentum_beta_zero_equals_sgd(self, seed):
        rng = make_rng(seed)
        a = b = OptimizerState.initial(rng.standard_normal(3))
        hyper = HyperParams(0.05, 0.0, 0.0)
        for _ in range(20):
            g = rng.standard_normal(3)
            a, b = step(a, g, hyper, MOMENTUM), step(b, g, hyper, SGD)
            np.testing.assert_array_equal(a.theta, b.theta)

    @pytest.mark.parametrize("rule, kw", [(ADABELIEF, dict(eta=0.0, zeta=0.0)), (AMSGRAD, dict(eta=0.0))])
    def test_degenerate_rates_stay_finite(self, rule, kw):
        state = OptimizerState.initial(np.ones(3))
        hyper = HyperParams(1e-3, 0.9, 0.9, **kw)
        for k in range(50):
            state = step(state, np.full(3, 1.0 if k % 2 else 0.0), hyper, rule)
        assert np.all(np.isfinite(state.theta))


class TestRun:
    def test_geometric_decay_closed_form(self):
        traj = run(NoisyQuadratic(1, 0.0), HyperParams(0.1), SGD, 1,
                   StopCondition(tau=0.005), theta0=np.array([1.0]))
        assert traj.steps == 22
        np.testing.assert_allclose(traj.thetas[:, 0], 0.9 ** np.arange(23), rtol=1e-12)
        # first k with 0.5 * 0.81**k <= 0.005
        assert 22 == math.ceil(math.log(0.01) / math.log(0.81))

    def test_zero_budget(self):
        traj = run(NoisyQuadratic(3, 1.0), HyperParams(0.1), ADAM, 4, StopCondition(max_steps=0))
        assert traj.steps == 0 and traj.thetas.shape == (1, 3)

    @pytest.mark.parametrize("rule", ALL_RULES, ids=lambda r: r.name)
    def test_same_seed_bit_identical(self, rule):
        kw = dict(problem=NoisyQuadratic(5, 2.0), hyper=HyperParams(0.01, 0.9, 0.9), rule=rule,
                  b=4, stop=StopCondition(max_steps=50), seed=3)
        a, b = run(**kw), run(**kw)
        assert np.array_equal(a.thetas, b.thetas) and a.to_csv() == b.to_csv()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_carries_trajectory(self):
        with pytest.raises(DivergenceError) as exc:
            run(NoisyQuadratic(2, 0.0), HyperParams(0.9), SGD, 1, StopCondition(max_steps=10**5),
                theta0=np.array([1e300, 1e300]))
        assert exc.value.trajectory is not None

    def test_stop_needs_a_criterion(self):
        with pytest.raises(ValueError):
            StopCondition()

    def test_epoch_budget(self):
        traj = run(NoisyQuadratic(2, 1.0), HyperParams(0.01), SGD, 2,
                   StopCondition(max_epochs=3, steps_per_epoch=7))
        assert traj.steps == 21


@given(x=st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(x):
    assert float(fmt(x)) == x
