from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.special import ndtr

from tiltminimax.errors import EmptyZeroSet, OverflowGuard
from tiltminimax.limit_experiment import (
    LimitSpec,
    delta_objective,
    efficient_estimation_rule,
    efficient_treatment_rule,
    estimation_minimax_value,
    estimation_risk,
    linex_optimal_shift,
    reference_value_profile,
    signal,
    solve_delta_star,
    treatment_minimax_value,
    treatment_risk,
)
from tiltminimax.stat_core import SpdMatrix, StreamSeed, derive_stream
from tiltminimax.tilt import TiltedLossSpec

# (e - 1) Phi(-1) + 1, mpmath at 40 digits
RISK_1_1_1 = 1.2726144398199781474
# dense-grid (step 1e-5 on [0, 20]) maximiser and maximum of (e^{D/lam} - 1) Phi(-D)
GRID_DELTA = {0.5: (1.65926, 1.291887004283812), 1.0: (1.03361, 0.27287344478829817),
              2.0: (0.86783, 0.10471527934981056), 5.0: (0.79372, 0.03676091837663517)}
# E[min(Z^2, 25)] by mpmath quadrature
E_MIN_Z2_25 = 0.99999889208030285833
# E[exp(min(Z^2, 1))] by mpmath quadrature
E_EXP_MIN_Z2_1 = 1.8159776567541312367


def _closed_form_estimation(sigma, c, lam):
    """E[exp(min(sigma^2 Z^2, c)/lam)] for 2 sigma^2 < lam."""
    a = sigma**2 / lam
    b = math.sqrt(c) / sigma
    k = math.sqrt(1 - 2 * a)
    return (2 * ndtr(b * k) - 1) / k + math.exp(c / lam) * 2 * ndtr(-b)


class TestRules:
    def test_estimation_rule(self):
        spec1 = LimitSpec(SpdMatrix([[4.0]]), [1.0])
        assert efficient_estimation_rule(spec1, [0.0]) == 0.0
        assert_allclose(efficient_estimation_rule(spec1, [2.0]), 1.0, rtol=1e-15)
        spec2 = LimitSpec(SpdMatrix(np.eye(2)), [1.0, 1.0])
        assert efficient_estimation_rule(spec2, [1.0, -1.0]) == 0.0

    def test_treatment_rule(self):
        spec = LimitSpec(SpdMatrix([[1.0]]), [1.0])
        assert efficient_treatment_rule(spec, [1.0]) == 1
        assert efficient_treatment_rule(spec, [-1.0]) == 0
        assert efficient_treatment_rule(spec, [0.0]) == 1

    @given(st.floats(0.01, 100), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
    def test_treatment_rule_scale_invariant(self, c, x):
        info = SpdMatrix([[2.0, 0.3], [0.3, 1.0]])
        a = LimitSpec(info, [1.0, -0.5])
        b = LimitSpec(info, [c, -0.5 * c])
        # exactly on the boundary the sign of a rounded zero decides
        assume(abs(signal(a, x)) > 1e-9)
        assert efficient_treatment_rule(a, x) == efficient_treatment_rule(b, x)

    def test_signal_distribution(self):
        # x ~ N(I^{1/2} h, I): the signal has mean mu_dot' h and variance sigma^2
        info = SpdMatrix([[2.0, 0.5], [0.5, 1.0]])
        spec = LimitSpec(info, [1.0, 2.0])
        h = np.array([0.3, -0.2])
        rng = derive_stream(StreamSeed(3))
        x = info.sqrt() @ h + rng.standard_normal((200000, 2))
        s = x @ spec.signal_weights
        assert abs(s.mean() - spec.mu_dot @ h) < 4 * spec.sigma / math.sqrt(s.size)
        assert_allclose(s.var(), spec.sigma**2, rtol=0.02)

    def test_sigma(self):
        spec = LimitSpec(SpdMatrix([[2.0, 0.5], [0.5, 1.0]]), [1.0, 2.0])
        g = np.array([1.0, 2.0])
        assert_allclose(spec.sigma, math.sqrt(g @ np.linalg.solve([[2.0, 0.5], [0.5, 1.0]], g)), rtol=1e-12)
        with pytest.raises(ValueError):
            LimitSpec(SpdMatrix([[1.0]]), [0.0])


class TestTreatment:
    def test_risk_examples(self):
        assert treatment_risk(0.0, 1.0, 1.0) == 1.0
        assert abs(treatment_risk(1.0, 1.0, 1.0) - RISK_1_1_1) <= 1e-12

    @given(st.floats(-30, 30), st.floats(0.2, 10), st.floats(0.1, 5))
    def test_risk_even(self, d, lam, s):
        assert treatment_risk(d, lam, s) == treatment_risk(-d, lam, s)

    @pytest.mark.parametrize("lam", [0.5, 1.0, 5.0])
    def test_risk_vanishes_far_out(self, lam):
        assert treatment_risk(50 * lam, lam, 1.0) - 1.0 < 1e-6

    def test_risk_overflow(self):
        with pytest.raises(OverflowGuard):
            treatment_risk(800.0, 1.0, 1.0)

    @pytest.mark.parametrize("lam", sorted(GRID_DELTA))
    def test_delta_star_grid(self, lam):
        d, g = solve_delta_star(lam, 1.0)
        d_ref, g_ref = GRID_DELTA[lam]
        assert abs(d - d_ref) <= 1e-5
        assert abs(g - g_ref) <= 1e-8

    def test_delta_star_lambda_one_range(self):
        d, _ = solve_delta_star(1.0, 1.0)
        assert 0.95 <= d <= 1.10

    def test_delta_star_untilted_limit(self):
        d, _ = solve_delta_star(1e8, 1.0)
        assert abs(d - 0.75179) <= 1e-4

    @given(st.floats(0.2, 10), st.floats(0.2, 5))
    @settings(max_examples=25, deadline=None)
    def test_sigma_scaling(self, lam, s):
        d1, _ = solve_delta_star(lam, s)
        d2, _ = solve_delta_star(lam / s, 1.0)
        assert abs(d1 - s * d2) <= 1e-6 * max(1.0, s)

    @pytest.mark.parametrize("lam", [0.1, 0.5, 1.0, 5.0, 50.0])
    def test_delta_star_interior_and_global(self, lam):
        d, g = solve_delta_star(lam, 1.0)
        grid = np.linspace(0, 20 + 10 * lam, 200001)
        assert g >= delta_objective(grid, lam, 1.0).max() - 1e-12
        assert g > delta_objective(0.0, lam, 1.0)

    def test_minimax_value(self):
        v = treatment_minimax_value(1.0, 1.0)
        d, _ = solve_delta_star(1.0, 1.0)
        assert_allclose(v.value, 1 + math.expm1(d) * ndtr(-d), rtol=1e-14)
        assert v.value > 1.0
        assert v.lf_prior.is_symmetric()
        assert_allclose(np.abs(v.lf_prior.effects([1.0])), d, atol=1e-10)

    def test_lf_prior_atoms_multivariate(self):
        spec = LimitSpec(SpdMatrix([[2.0, 0.5], [0.5, 1.0]]), [1.0, 2.0])
        v = treatment_minimax_value(1.5, spec.sigma, spec)
        assert_allclose(np.sort(v.lf_prior.effects(spec.mu_dot)), [-v.delta_star, v.delta_star], atol=1e-10)

    @pytest.mark.parametrize("lam", [0.3, 1.0, 2.0, 8.0])
    def test_value_exceeds_one(self, lam):
        assert treatment_minimax_value(lam, 1.0).value > 1.0

    @pytest.mark.parametrize("c", [0.5, 3.0])
    def test_joint_rescaling(self, c):
        info = np.array([[2.0, 0.5], [0.5, 1.0]])
        a = LimitSpec(SpdMatrix(info), [1.0, 2.0])
        b = LimitSpec(SpdMatrix(c * c * info), [c, 2 * c])
        assert abs(a.sigma - b.sigma) <= 1e-12
        va = treatment_minimax_value(1.0, a.sigma, a).value
        vb = treatment_minimax_value(1.0, b.sigma, b).value
        assert abs(va - vb) <= 1e-10
        loss = TiltedLossSpec("estimation", 1.0, bound_c=25)
        assert abs(estimation_minimax_value(a, loss).value - estimation_minimax_value(b, loss).value) <= 1e-10


class TestEstimation:
    def test_zero_noise(self):
        v = estimation_minimax_value(1e-8, TiltedLossSpec("estimation", 1.0, bound_c=25))
        assert abs(v.value - 1.0) <= 1e-6

    def test_large_lambda(self):
        lam = 1e8
        v = estimation_minimax_value(1.0, TiltedLossSpec("estimation", lam, bound_c=25))
        assert abs(lam * (v.value - 1.0) - E_MIN_Z2_25) <= 1e-3

    def test_c1_frozen(self):
        v = estimation_minimax_value(1.0, TiltedLossSpec("estimation", 1.0, bound_c=1.0))
        assert abs(v.value - E_EXP_MIN_Z2_1) <= 1e-12

    def test_c1_monte_carlo(self):
        v = estimation_minimax_value(1.0, TiltedLossSpec("estimation", 1.0, bound_c=1.0)).value
        z = derive_stream(StreamSeed(101)).standard_normal(10**7)
        t = np.exp(np.minimum(z * z, 1.0))
        se = t.std(ddof=1) / math.sqrt(t.size)
        assert abs(t.mean() - v) <= 4 * se

    @given(st.floats(0.05, 1.5), st.floats(0.5, 30), st.floats(3.5, 20))
    @settings(max_examples=40, deadline=None)
    def test_closed_form(self, s, c, lam):
        assume(2 * s * s < 0.95 * lam)  # domain of the closed form
        loss = TiltedLossSpec("estimation", lam, bound_c=c)
        assert_allclose(estimation_minimax_value(s, loss).value, _closed_form_estimation(s, c, lam), rtol=1e-11)

    @pytest.mark.parametrize("b", [0.05, 0.1, 0.5, -0.3, 2.0])
    def test_shift_dominated(self, b):
        loss = TiltedLossSpec("estimation", 1.0, bound_c=25)
        v = estimation_minimax_value(1.0, loss).value
        assert estimation_risk(1.0, loss, bias=b) > v

    def test_shrink_dominated(self):
        loss = TiltedLossSpec("estimation", 1.0, bound_c=25)
        v = estimation_minimax_value(1.0, loss).value
        eps = 0.2

        def worst(M):
            return max(estimation_risk(1.0, loss, bias=-eps * d, scale=1 - eps) for d in np.linspace(-M, M, 41))

        assert worst(10.0) > v
        # on |D| <= 5 the shrunk rule still wins: its bias there is at most 1
        assert worst(5.0) < v

    def test_requires_estimation_loss(self):
        with pytest.raises(ValueError):
            estimation_minimax_value(1.0, TiltedLossSpec("treatment", 1.0))


class TestLinex:
    @pytest.mark.parametrize("s2", [0.5, 1.0, 2.0])
    def test_untilted_limit(self, s2):
        assert abs(linex_optimal_shift(1e8, 1e3, s2) - s2 / 2) <= 1e-3

    def test_monotone_in_lambda(self):
        shifts = [linex_optimal_shift(lam, 20.0, 1.0) for lam in (0.5, 1, 2, 5, 10)]
        d = np.diff(shifts)
        assert np.all(d < 0) or np.all(d > 0)
        # direction observed by brute force: the shift falls as lambda grows
        assert np.all(d < 0)

    def test_brute_force_oracle(self):
        from tiltminimax.limit_experiment import linex_risk

        grid = np.linspace(0.0, 6.0, 601)
        r = [linex_risk(s, 1.0, 20.0, 1.0) for s in grid]
        assert abs(linex_optimal_shift(1.0, 20.0, 1.0) - grid[int(np.argmin(r))]) <= 0.01

    def test_small_lambda_large_cap(self):
        assert linex_optimal_shift(0.2, 50.0, 1.0) > linex_optimal_shift(5.0, 50.0, 1.0) + 1.0

    def test_guard(self):
        with pytest.raises(OverflowGuard):
            linex_optimal_shift(0.01, 50.0, 1.0)


def _bern_profile(kind, lam, grid):
    loss = TiltedLossSpec(kind, lam, bound_c=25 if kind == "estimation" else None)
    return reference_value_profile(
        grid,
        info_at=lambda t: 1.0 / (t * (1 - t)),
        mu_at=lambda t: t - 0.5,
        mu_dot_at=lambda t: 1.0,
        loss=loss,
    )


class TestProfile:
    def test_bernoulli_estimation(self):
        p = _bern_profile("estimation", 2.0, np.round(np.linspace(0.1, 0.9, 9), 12))
        assert p.arg_sup == 0.5
        order = np.argsort(p.sigma, kind="stable")
        assert np.all(np.diff(p.value[order]) >= 0)
        for t, v in zip(p.theta, p.value):
            ref = estimation_minimax_value(math.sqrt(t * (1 - t)), TiltedLossSpec("estimation", 2.0, bound_c=25))
            assert_allclose(v, ref.value, rtol=1e-14)

    def test_bernoulli_treatment_zero_set(self):
        p = _bern_profile("treatment", 1.0, np.linspace(0.1, 0.9, 17))
        assert p.admissible.sum() == 1
        assert p.arg_sup == pytest.approx(0.5, abs=1e-12)
        assert p.sup == treatment_minimax_value(1.0, 0.5).value

    def test_empty_zero_set(self):
        with pytest.raises(EmptyZeroSet, match="empty zero set"):
            _bern_profile("treatment", 1.0, [0.2, 0.3, 0.45])

    def test_constant_profile(self):
        p = reference_value_profile(
            [0.1, 0.5, 2.0], lambda t: 4.0, lambda t: t, lambda t: 1.0,
            TiltedLossSpec("estimation", 1.0, bound_c=25),
        )
        assert np.ptp(p.value) == 0.0
