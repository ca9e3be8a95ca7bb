import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import lp_ot_value, rand_simplex
from sdot.solvers import (
    InfeasibleTransportError,
    InfiniteCostError,
    NumericalUnderflowError,
    SinkhornConvergenceError,
    UnbalancedMarginalsError,
    dual_feasible,
    dual_value,
    plan_violation,
    round_to_feasible,
    solve_exact,
    solve_sinkhorn,
)
from sdot.tropical import ShapeError, pairing

HALF = np.array([0.5, 0.5])


def vertex_enumeration_2x2(C, a, b):
    # the 2x2 transportation polytope is a segment parametrized by P00
    lo = max(0.0, a[0] - b[1])
    hi = min(a[0], b[0])
    best = math.inf
    for t in (lo, hi):
        P = np.array([[t, a[0] - t], [b[0] - t, a[1] - b[0] + t]])
        best = min(best, float((np.asarray(C) * P).sum()))
    return best


class TestExact:
    def test_zero_diagonal(self):
        s = solve_exact([[0, 1], [1, 0]], HALF, HALF)
        assert s.value == 0
        assert np.allclose(s.plan, 0.5 * np.eye(2))

    def test_forced_plan(self):
        assert solve_exact([[0, 1], [1, 0]], [1, 0], [0, 1]).value == 1

    def test_every_plan_costs_the_same(self):
        C = [[1, 2], [3, 4]]
        assert vertex_enumeration_2x2(C, HALF, HALF) == 2.5
        s = solve_exact(C, HALF, HALF)
        assert s.value == pytest.approx(2.5, abs=1e-15)
        assert dual_value(s.f, s.g, HALF, HALF) == pytest.approx(2.5, abs=1e-12)

    def test_random_2x2_against_vertices(self, rng):
        for _ in range(50):
            C = rng.integers(0, 30, (2, 2)).astype(float)
            a, b = rand_simplex(rng, 2), rand_simplex(rng, 2)
            assert solve_exact(C, a, b).value == pytest.approx(vertex_enumeration_2x2(C, a, b), abs=1e-12)

    @pytest.mark.parametrize("rule", ["dantzig", "bland"])
    def test_against_highs(self, rng, rule):
        for _ in range(60):
            m, n = rng.integers(1, 9, 2)
            C = rng.integers(0, 100, (m, n)).astype(float)
            a, b = rand_simplex(rng, m), rand_simplex(rng, n)
            s = solve_exact(C, a, b, pivot_rule=rule)
            ref = lp_ot_value(C, a, b)
            assert s.value == pytest.approx(ref, rel=1e-9, abs=1e-9)
            assert plan_violation(s.plan, a, b) <= 1e-9
            assert (s.plan >= 0).all()
            assert s.value == pairing(C, s.plan)

    def test_degenerate_uniform_instances(self, rng):
        # equal marginals and many ties in the costs produce degenerate pivots
        for n in (3, 5, 8, 12):
            C = rng.integers(0, 3, (n, n)).astype(float)
            u = np.full(n, 1.0 / n)
            s = solve_exact(C, u, u, pivot_rule="bland")
            assert s.value == pytest.approx(lp_ot_value(C, u, u), abs=1e-12)

    def test_zero_marginal_entries(self):
        C = np.array([[1.0, 5.0, 2.0], [4.0, 1.0, 7.0]])
        s = solve_exact(C, [0.0, 1.0], [0.5, 0.5, 0.0])
        assert s.value == pytest.approx(2.5)
        assert np.allclose(s.plan[0], 0) and np.allclose(s.plan[:, 2], 0)

    def test_unnormalized_mass(self):
        C = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert solve_exact(C, [0.2, 0.2], [0.1, 0.3]).value == pytest.approx(lp_ot_value(C, [0.2, 0.2], [0.1, 0.3]))

    def test_infinite_rejected_by_default(self):
        with pytest.raises(InfiniteCostError):
            solve_exact([[0, np.inf], [np.inf, 0]], HALF, HALF)

    def test_infinite_entries_allowed(self):
        C = np.array([[1.0, np.inf, 5.0], [np.inf, 2.0, 1.0]])
        a, b = np.array([0.6, 0.4]), np.array([0.3, 0.3, 0.4])
        s = solve_exact(C, a, b, allow_infinite=True)
        assert s.value == pytest.approx(lp_ot_value(C, a, b))
        assert s.plan[np.isinf(C)].sum() == 0
        assert dual_feasible(C, s.f, s.g)[0]

    def test_infeasible_with_infinite(self):
        with pytest.raises(InfeasibleTransportError):
            solve_exact([[0, np.inf], [np.inf, 0]], [1, 0], [0, 1], allow_infinite=True)

    def test_unbalanced(self):
        with pytest.raises(UnbalancedMarginalsError):
            solve_exact([[1, 2]], [1.0], [0.5, 0.4])

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            solve_exact([[1, 2]], [1.0], [1.0])

    def test_deterministic(self, rng):
        C = rng.uniform(0, 1e6, (15, 11))
        a, b = rand_simplex(rng, 15), rand_simplex(rng, 11)
        s1, s2 = solve_exact(C, a, b), solve_exact(C, a, b)
        assert s1.value == s2.value and np.array_equal(s1.plan, s2.plan) and np.array_equal(s1.f, s2.f)

    def test_iteration_limit(self, rng):
        from sdot.solvers import SolverError
        C = rng.uniform(0, 1, (20, 20))
        u = np.full(20, 0.05)
        with pytest.raises(SolverError):
            solve_exact(C, u, u, max_iter=1)


class TestDuals:
    def test_dual_value(self):
        assert dual_value([0, 0], [0, 0], HALF, HALF) == 0
        assert dual_value([1, 1], [2, 2], HALF, HALF) == 3

    def test_dual_value_length(self):
        with pytest.raises(ShapeError):
            dual_value([1], [1, 2], HALF, HALF)

    def test_dual_feasible(self):
        assert dual_feasible([[1, 2], [3, 4]], [0, 0], [0, 0])[0]
        ok, worst = dual_feasible([[1]], [10], [10])
        assert not ok and worst == 19

    def test_inf_never_violated(self):
        ok, _ = dual_feasible([[0, np.inf]], [5], [-5, 1e9])
        assert ok

    def test_random_5x5_feasible_and_tight(self, rng):
        for _ in range(100):
            C = rng.integers(0, 50, (5, 5)).astype(float)
            a, b = rand_simplex(rng, 5), rand_simplex(rng, 5)
            s = solve_exact(C, a, b)
            ok, worst = dual_feasible(C, s.f, s.g)
            assert ok, worst
            assert abs(dual_value(s.f, s.g, a, b) - s.value) <= 1e-9 * (1 + abs(s.value))


class TestSinkhorn:
    def test_zero_diagonal(self):
        s = solve_sinkhorn([[0, 1], [1, 0]], HALF, HALF, epsilon=0.01)
        assert abs(s.value) <= 1e-3
        assert s.f is None and s.g is None

    def test_converges_to_exact_as_epsilon_shrinks(self):
        C = np.array([[1.0, 2.0], [3.0, 5.0]])
        exact = solve_exact(C, HALF, HALF).value
        # without warm starts the 0.01 run crawls at a 1/k rate: the entropic
        # optimum sits almost on the boundary of the polytope
        errs = [abs(solve_sinkhorn(C, HALF, HALF, epsilon=e, anneal=True).value - exact) for e in (1.0, 0.1, 0.01)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-3

    def test_constant_plan_value_example(self):
        # every plan costs 2.5 here, whatever epsilon
        for e in (1.0, 0.1, 0.01):
            assert solve_sinkhorn([[1, 2], [3, 4]], HALF, HALF, epsilon=e).value == pytest.approx(2.5, abs=1e-8)

    def test_zero_mass_rows_and_columns(self):
        s = solve_sinkhorn([[1, 2, 3], [3, 4, 0]], [0, 1], [0.5, 0, 0.5])
        assert (s.plan[0] == 0).all() and (s.plan[:, 1] == 0).all()
        assert plan_violation(s.plan, [0, 1], [0.5, 0, 0.5]) <= 1e-9

    def test_zero_mass_rejected_without_handling(self):
        with pytest.raises(ValueError):
            solve_sinkhorn([[1, 2]], [1.0], [1.0, 0.0], drop_zeros=False)

    def test_negative_cost_rejected(self):
        with pytest.raises(ValueError):
            solve_sinkhorn([[-1.0]], [1.0], [1.0])

    def test_infinite_cost_rejected(self):
        with pytest.raises(InfiniteCostError):
            solve_sinkhorn([[0, np.inf]], [1.0], [0.5, 0.5])

    def test_non_convergence_reports_violation(self, rng):
        C = rng.uniform(0, 1, (10, 10))
        u = np.full(10, 0.1)
        with pytest.raises(SinkhornConvergenceError) as e:
            solve_sinkhorn(C, u, u, epsilon=1e-3, tol=1e-15, max_iter=3)
        assert e.value.violation > 0 and e.value.iterations == 3

    def test_underflow_without_log_domain(self):
        C = np.array([[0.0, 1000.0], [1000.0, 0.0]]) + 1000.0
        with pytest.raises(NumericalUnderflowError):
            solve_sinkhorn(C, HALF, HALF, epsilon=0.1, log_domain=False)

    def test_scaling_mode_agrees_with_log_domain(self, rng):
        C = rng.uniform(0, 1, (6, 7))
        a, b = rand_simplex(rng, 6), rand_simplex(rng, 7)
        s1 = solve_sinkhorn(C, a, b, epsilon=0.1, log_domain=False)
        s2 = solve_sinkhorn(C, a, b, epsilon=0.1)
        assert s1.value == pytest.approx(s2.value, rel=1e-7)

    def test_violation_history_non_increasing(self, rng):
        for _ in range(10):
            C = rng.uniform(0, 100, (12, 9))
            a, b = rand_simplex(rng, 12), rand_simplex(rng, 9)
            s = solve_sinkhorn(C, a, b, epsilon=1.0, tol=1e-12, record_history=True)
            h = np.array(s.history)
            assert len(h) >= 2
            assert (np.diff(h) <= 1e-15).all()

    def test_annealing_reaches_target(self, rng):
        C = rng.uniform(0, 1e6, (20, 20))
        u = np.full(20, 0.05)
        exact = solve_exact(C, u, u).value
        s = solve_sinkhorn(C, u, u, epsilon=1e-4 * C.max(), anneal=True, tol=1e-6)
        assert s.epsilon == pytest.approx(1e-4 * C.max())
        assert abs(s.value - exact) / exact <= 1e-3

    def test_rounding_gives_feasible_plan(self, rng):
        C = rng.uniform(0, 1, (8, 5))
        a, b = rand_simplex(rng, 8), rand_simplex(rng, 5)
        s = solve_sinkhorn(C, a, b, epsilon=0.05, tol=1e-3, round_plan=True)
        assert plan_violation(s.plan, a, b) <= 1e-12
        assert (s.plan >= 0).all()

    def test_round_to_feasible_keeps_feasible_plans(self):
        P = np.array([[0.25, 0.25], [0.25, 0.25]])
        assert np.allclose(round_to_feasible(P, HALF, HALF), P)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1000))
def test_exact_value_positively_homogeneous(seed, lam):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(1, 6, 2)
    C = rng.integers(0, 100, (m, n)).astype(float)
    a, b = rand_simplex(rng, m), rand_simplex(rng, n)
    v = solve_exact(C, a, b).value
    assert solve_exact(lam * C, a, b).value == pytest.approx(lam * v, rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_weak_duality_for_random_feasible_potentials(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(1, 6, 2)
    C = rng.integers(0, 100, (m, n)).astype(float)
    a, b = rand_simplex(rng, m), rand_simplex(rng, n)
    f = rng.uniform(-50, 50, m)
    g = np.min(C - f[:, None], axis=0) - rng.uniform(0, 5, n)
    assert dual_feasible(C, f, g)[0]
    assert dual_value(f, g, a, b) <= solve_exact(C, a, b).value + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_strong_duality_and_feasibility(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(1, 10, 2)
    C = rng.uniform(0, 1e3, (m, n))
    a, b = rand_simplex(rng, m), rand_simplex(rng, n)
    s = solve_exact(C, a, b)
    assert dual_feasible(C, s.f, s.g)[0]
    assert abs(dual_value(s.f, s.g, a, b) - s.value) <= 1e-9 * (1 + abs(s.value))
    assert plan_violation(s.plan, a, b) <= 1e-9


def test_sinkhorn_plan_value_is_pairing(rng):
    C = rng.uniform(0, 10, (4, 6))
    a, b = rand_simplex(rng, 4), rand_simplex(rng, 6)
    s = solve_sinkhorn(C, a, b, epsilon=0.5)
    assert s.value == pairing(C, s.plan)
    assert plan_violation(s.plan, a, b) <= 1e-9 + 1e-12


def test_all_vertices_of_small_polytope_bound_exact_value(rng):
    # brute force: every permutation plan of a uniform n x n problem is a vertex
    for _ in range(10):
        n = 4
        C = rng.integers(0, 20, (n, n)).astype(float)
        best = min(sum(C[i, p[i]] for i in range(n)) / n for p in itertools.permutations(range(n)))
        u = np.full(n, 1 / n)
        assert solve_exact(C, u, u).value == pytest.approx(best, abs=1e-12)
