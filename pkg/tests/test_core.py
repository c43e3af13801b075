import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedot.core import (FLOOR, Problem, ScalingState, damped_combine, gibbs_kernel, half_step_u, half_step_v,
                        i_min, marginal_errors, objective, scale, solve_centralized, transport_plan)
from fedot.errors import NonFiniteCost, NonPositiveEpsilon, ProblemError, UnderflowDivide
from fedot.stop import StopPolicy, Verdict, evaluate_stop
from fedot.study import TOY_C

# 3x3 instance, eps = 0.5. Plan and objective from a 40-digit mpmath Sinkhorn
# run to its fixed point; cvxpy (SCS, entropic objective) agrees to 1e-10.
ORACLE_C = [[0, 1, 2], [1, 0, 1], [2, 1, 0]]
ORACLE_A = [0.5, 0.3, 0.2]
ORACLE_B = [0.2, 0.3, 0.5]
ORACLE_P = [
    [0.19640275800758169, 0.15, 0.15359724199241831],
    [0.0035129947117760173, 0.14648700528822398, 0.15],
    [8.4247280642294351e-5, 0.0035129947117760173, 0.19640275800758169],
]
ORACLE_OBJ = -0.79465356353614641

TIGHT = StopPolicy(threshold=1e-14, max_iterations=10_000, divergence_iterations=None)


def test_gibbs_zero_cost_is_ones():
    K = gibbs_kernel(np.zeros((4, 4)), 1.0)
    assert np.array_equal(K.K, np.ones((4, 4)))


def test_gibbs_toy_first_row_floored():
    K = gibbs_kernel(np.array(TOY_C, float), 5e-3)
    # exp(-600) is still a normal double, so nothing is floored at this epsilon
    np.testing.assert_allclose(K.K[0], [1.0, math.exp(-200), math.exp(-400), math.exp(-600)], rtol=1e-13)
    # at 1e-3 the entries exp(-2000) and exp(-3000) underflow and sit at the floor
    K = gibbs_kernel(np.array(TOY_C, float), 1e-3)
    assert K.K[0, 2] == FLOOR and K.K[0, 3] == FLOOR


def test_gibbs_constant_shift_scales_kernel():
    rng = np.random.default_rng(1)
    C = rng.random((5, 5))
    K0 = gibbs_kernel(C, 0.3).K
    K1 = gibbs_kernel(C + 0.7, 0.3).K
    np.testing.assert_allclose(K1, K0 * math.exp(-0.7 / 0.3), rtol=1e-14)


def test_gibbs_rejects_bad_input():
    with pytest.raises(NonPositiveEpsilon):
        gibbs_kernel(np.zeros((2, 2)), 0.0)
    with pytest.raises(NonFiniteCost):
        gibbs_kernel(np.array([[0.0, np.nan], [0.0, 0.0]]), 1.0)


def test_half_step_u_ones():
    q, u = half_step_u(np.ones((4, 4)), np.ones(4), np.array([0.3, 0.2, 0.1, 0.4]))
    np.testing.assert_array_equal(q, [4, 4, 4, 4])
    np.testing.assert_allclose(u, [0.075, 0.05, 0.025, 0.1], rtol=1e-15)


def test_half_step_u_symmetric_2x2():
    e = math.exp(-1)
    q, u = half_step_u(np.array([[1, e], [e, 1]]), np.ones(2), np.array([0.5, 0.5]))
    np.testing.assert_allclose(q, [1 + e, 1 + e], rtol=1e-15)
    np.testing.assert_allclose(u, [0.365529, 0.365529], atol=1e-6)


def test_half_step_zero_marginal_gives_zero_scaling():
    rng = np.random.default_rng(0)
    _, u = half_step_u(rng.random((3, 3)) + 0.1, np.ones(3), np.zeros(3))
    assert np.array_equal(u, np.zeros(3))
    _, v = half_step_v(rng.random((3, 3)) + 0.1, np.ones(3), np.zeros(3))
    assert np.array_equal(v, np.zeros(3))


def test_half_step_v_after_u():
    a = np.array([0.3, 0.2, 0.1, 0.4])
    r, v = half_step_v(np.ones((4, 4)), a / 4, np.array([0.2, 0.3, 0.3, 0.2]))
    np.testing.assert_allclose(r, [0.25] * 4, rtol=1e-15)
    np.testing.assert_allclose(v, [0.8, 1.2, 1.2, 0.8], rtol=1e-15)


def test_half_step_v_size_one():
    _, v = half_step_v(np.ones((1, 1)), np.ones(1), np.ones(1))
    assert v.tolist() == [1.0]


def test_scale_underflow_raises():
    with pytest.raises(UnderflowDivide):
        scale(np.array([[1.0]]), np.array([[0.0]]))


def test_damped_combine_examples():
    new, old = np.array([2.0, 3.0]), np.array([1.0, 5.0])
    assert np.array_equal(damped_combine(new, old, 1.0), new)
    assert np.array_equal(damped_combine(new, old, 0.0), old)
    assert damped_combine(np.array([2.0]), np.array([1.0]), 0.25).tolist() == [1.25]
    with pytest.raises(ValueError):
        damped_combine(new, old, 1.5)


@given(st.floats(0.0, 1.0), st.lists(st.floats(0.01, 10.0), min_size=1, max_size=6))
def test_damping_fixed_point(alpha, x):
    # a point that is already a fixed point stays one under any damping
    x = np.array(x)
    np.testing.assert_allclose(damped_combine(x, x, alpha), x, rtol=1e-15)


def test_plan_after_one_iteration_is_outer_product():
    a = np.array([0.3, 0.2, 0.1, 0.4])
    b = np.array([0.2, 0.3, 0.3, 0.2])
    K = np.ones((4, 4))
    _, u = half_step_u(K, np.ones(4), a)
    _, v = half_step_v(K, u, b)
    P = transport_plan(ScalingState(u[:, None], v[:, None]), K)
    np.testing.assert_allclose(P, np.outer(a, b), rtol=1e-15)


def test_plan_with_unit_scalings_is_kernel():
    K = np.random.default_rng(3).random((4, 4))
    P = transport_plan(ScalingState.ones(4), K)
    assert np.array_equal(P, K)


def test_marginal_errors_unit_scalings():
    n = 4
    a = np.full(n, 1 / n)
    ea, eb = marginal_errors(ScalingState.ones(n), np.ones((n, n)), a, a[:, None])
    assert ea == pytest.approx(n * (n - 1 / n))
    assert eb == pytest.approx(n * (n - 1 / n))


def test_objective_ones():
    n = 3
    assert objective(np.ones((n, n)), np.zeros((n, n)), 1.0) == pytest.approx(-n * n)


def test_objective_symmetric_2x2_closed_form():
    e = math.exp(-1)
    p_on, p_off = 0.5 / (1 + e), 0.5 * e / (1 + e)
    P = np.array([[p_on, p_off], [p_off, p_on]])
    want = 2 * p_off + 2 * (p_on * (math.log(p_on) - 1) + p_off * (math.log(p_off) - 1))
    assert (P * np.array([[0, 1], [1, 0]])).sum() == pytest.approx(0.268942, abs=1e-6)
    assert objective(P, np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0) == pytest.approx(want, rel=1e-14)


def test_solve_matches_oracle():
    res = solve_centralized(Problem(ORACLE_C, ORACLE_A, ORACLE_B, 0.5), TIGHT)
    assert res.verdict is Verdict.CONVERGED
    K = gibbs_kernel(np.array(ORACLE_C, float), 0.5)
    np.testing.assert_allclose(res.plan(K), ORACLE_P, rtol=1e-12, atol=1e-15)
    assert res.objective == pytest.approx(ORACLE_OBJ, rel=1e-12)
    # the scaling-form objective equals the direct plan evaluation
    assert objective(res.plan(K), np.array(ORACLE_C, float), 0.5) == pytest.approx(res.objective, rel=1e-12)


def test_solve_zero_cost_one_iteration():
    a = np.array([0.1, 0.2, 0.3, 0.4])
    b = np.array([0.25, 0.25, 0.4, 0.1])
    res = solve_centralized(Problem(np.zeros((4, 4)), a, b, 1.0), TIGHT)
    assert res.iterations == 1 and res.verdict is Verdict.CONVERGED
    assert res.err_a < 1e-16 and res.err_b < 1e-16


def test_problem_validation():
    with pytest.raises(ProblemError):
        Problem(np.zeros((2, 2)), [0.5, 0.5], [0.3, 0.3], 1.0)
    with pytest.raises(ProblemError):
        Problem(np.zeros((2, 3)), [0.5, 0.5], [0.5, 0.5], 1.0)
    with pytest.raises(NonPositiveEpsilon):
        Problem(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], -1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.floats(0.05, 2.0), st.floats(0.0, 5.0), st.integers(0, 2**32 - 1))
def test_shift_invariance_of_plan(n, eps, kappa, seed):
    rng = np.random.default_rng(seed)
    C = rng.random((n, n))
    a = rng.random(n) + 0.1
    b = rng.random(n) + 0.1
    a, b = a / a.sum(), b / b.sum()
    r0 = solve_centralized(Problem(C, a, b, eps), TIGHT)
    r1 = solve_centralized(Problem(C + kappa, a, b, eps), TIGHT)
    P0 = r0.plan(gibbs_kernel(C, eps))
    P1 = r1.plan(gibbs_kernel(C + kappa, eps))
    np.testing.assert_allclose(P1, P0, rtol=1e-9, atol=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 10), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_multi_target_equals_columns(n, N, seed):
    rng = np.random.default_rng(seed)
    C = rng.random((n, n))
    a = rng.random(n) + 0.1
    a /= a.sum()
    B = rng.random((n, N)) + 0.1
    B /= B.sum(axis=0)
    stop = StopPolicy(threshold=1e-15, max_iterations=300, divergence_iterations=None)
    joint = solve_centralized(Problem(C, a, B, 0.2), stop)
    for j in range(N):
        single = solve_centralized(Problem(C, a, B[:, j], 0.2), StopPolicy(
            threshold=1e-15, max_iterations=joint.iterations, divergence_iterations=None))
        np.testing.assert_allclose(joint.state.u[:, j], single.state.u[:, 0], rtol=1e-12)
        np.testing.assert_allclose(joint.state.v[:, j], single.state.v[:, 0], rtol=1e-12)


@pytest.mark.parametrize("err, it, elapsed, want", [
    (9e-6, 5, 0.0, Verdict.CONVERGED),
    (1e-3, 3000, 0.0, Verdict.DIVERGED),
    (1e-3, 10, 11.0, Verdict.TIMEOUT),
    (9e-6, 3000, 11.0, Verdict.CONVERGED),
    (1e-3, 3000, 11.0, Verdict.TIMEOUT),
    (1e-3, 10, 0.0, None),
])
def test_evaluate_stop(err, it, elapsed, want):
    assert evaluate_stop(StopPolicy.loose(fast=True), err, it, elapsed) is want


def test_evaluate_stop_nonfinite_diverges():
    assert evaluate_stop(StopPolicy(), float("nan"), 1, 0.0) is Verdict.DIVERGED


def test_i_min():
    assert i_min([5.0, 2.0, 1.0005, 1.0]) == 3
    with pytest.raises(ValueError):
        i_min([])
