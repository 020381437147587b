import numpy as np
import pytest
from hypothesis import given, strategies as st

from agile_mpc.qp import INFEASIBLE, ActiveSetSolver, QpProblem, WarmStart, kkt_residual, qp_solve

from qp_oracles import enumerate_active_sets, projected_gradient, random_box_qp


def box(H, f, lb, ub):
    n = len(f)
    return QpProblem(H, f, np.eye(n), lb, ub)


def test_unconstrained_minimum():
    sol = qp_solve(QpProblem.unconstrained(np.eye(2), [-1.0, -2.0]))
    assert sol.ok
    np.testing.assert_allclose(sol.x, [1.0, 2.0])


def test_active_upper_bound():
    sol = qp_solve(QpProblem([[1.0]], [-2.0], [[1.0]], [-np.inf], [1.0]))
    assert sol.ok
    assert sol.x[0] == pytest.approx(1.0)
    assert sol.active[0] == -1
    assert sol.multipliers[0] == pytest.approx(-1.0)


def test_invalid_problems_rejected():
    with pytest.raises(ValueError):
        QpProblem([[1.0, 2.0], [0.0, 1.0]], [0, 0], np.eye(2), -1, 1)
    with pytest.raises(ValueError):
        QpProblem(-np.eye(2), [0, 0], np.eye(2), -1, 1)


def test_crossed_bounds_are_infeasible():
    sol = qp_solve(QpProblem(np.eye(2), [0, 0], np.eye(2), [1, 0], [0, 1]))
    assert sol.status == INFEASIBLE


def test_inconsistent_rows_are_infeasible():
    # x1 + x2 >= 2 with both variables capped at 0.5
    A = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    sol = qp_solve(QpProblem(np.eye(2), [0, 0], A, [2.0, -1, -1], [np.inf, 0.5, 0.5]))
    assert sol.status == INFEASIBLE


def test_random_box_qps_match_projected_gradient():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        H, f, lb, ub = random_box_qp(rng)
        p = box(H, f, lb, ub)
        sol = qp_solve(p)
        assert sol.ok
        assert sol.kkt_residual <= 1e-6
        x_ref = projected_gradient(H, f, lb, ub)
        assert abs(sol.objective - p.objective(x_ref)) <= 1e-6


@given(st.integers(0, 2**32 - 1))
def test_general_constraints_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 4))
    M = rng.standard_normal((n, n))
    H = M @ M.T + 0.2 * np.eye(n)
    f = rng.standard_normal(n) * 2
    A = rng.standard_normal((m, n))
    # bounds around a known feasible point keep the instance feasible
    x_feas = rng.standard_normal(n) * 0.3
    ax = A @ x_feas
    lb = np.where(rng.random(m) < 0.8, ax - rng.uniform(0.05, 1, m), -np.inf)
    ub = np.where(rng.random(m) < 0.8, ax + rng.uniform(0.05, 1, m), np.inf)
    p = QpProblem(H, f, A, lb, ub)
    sol = qp_solve(p)
    assert sol.ok
    _, best = enumerate_active_sets(H, f, A, lb, ub)
    assert sol.objective == pytest.approx(best, abs=1e-9)
    assert sol.kkt_residual <= 1e-6


@given(st.integers(0, 2**32 - 1))
def test_optimal_solutions_are_feasible_and_stationary(seed):
    rng = np.random.default_rng(seed)
    H, f, lb, ub = random_box_qp(rng)
    n = len(f)
    A = np.vstack([np.eye(n), np.tril(np.ones((n, n)))])
    lb2 = np.concatenate([lb, np.full(n, -1.0)])
    ub2 = np.concatenate([ub, np.full(n, 1.0)])
    p = QpProblem(H, f, A, lb2, ub2)
    sol = qp_solve(p)
    assert sol.ok
    ax = A @ sol.x
    assert np.all(ax >= lb2 - 1e-8) and np.all(ax <= ub2 + 1e-8)
    assert kkt_residual(p, sol.x, sol.multipliers) <= 1e-6


@given(st.integers(0, 2**32 - 1))
def test_objective_never_increases_along_iterations(seed):
    rng = np.random.default_rng(seed)
    H, f, lb, ub = random_box_qp(rng)
    sol = qp_solve(box(H, f, lb, ub))
    hist = np.array(sol.history)
    assert np.all(np.diff(hist) <= 1e-12 * (1 + np.abs(hist[:-1])))


@given(st.integers(0, 2**32 - 1))
def test_warm_start_resolve_is_quick_and_identical(seed):
    rng = np.random.default_rng(seed)
    H, f, lb, ub = random_box_qp(rng)
    p = box(H, f, lb, ub)
    cold = qp_solve(p)
    warm = qp_solve(p, cold.warm_start())
    assert warm.iterations <= 2
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_warm_start_never_moves_the_optimum(seed):
    rng = np.random.default_rng(seed)
    H, f, lb, ub = random_box_qp(rng, n=6)
    p = box(H, f, lb, ub)
    guess = rng.integers(-1, 2, 6)
    a = qp_solve(p)
    b = qp_solve(p, WarmStart(guess, rng.uniform(lb, ub)))
    assert b.ok
    assert abs(a.objective - b.objective) <= 1e-9 * (1 + abs(a.objective))


def test_solver_remembers_last_active_set():
    rng = np.random.default_rng(3)
    H, f, lb, ub = random_box_qp(rng, n=8)
    s = ActiveSetSolver(remember=True)
    first = s.solve(box(H, f, lb, ub))
    again = s.solve(box(H, f + 1e-9, lb, ub))
    assert again.iterations <= 2 < first.iterations or first.iterations <= 2
    np.testing.assert_allclose(again.x, first.x, atol=1e-6)


def test_deterministic_iterates():
    rng = np.random.default_rng(9)
    H, f, lb, ub = random_box_qp(rng, n=8)
    a, b = qp_solve(box(H, f, lb, ub)), qp_solve(box(H, f, lb, ub))
    assert a.history == b.history
    np.testing.assert_array_equal(a.x, b.x)


def test_iteration_cap_reports_best_iterate():
    rng = np.random.default_rng(4)
    H, f, lb, ub = random_box_qp(rng, n=8)
    sol = qp_solve(box(H, f, lb, ub), max_iter=1)
    if not sol.ok:
        assert sol.status == "max_iterations"
        assert np.all(np.isfinite(sol.x))


def test_badly_scaled_gradient_terminates_optimal():
    # a huge linear term pins the solution at a bound; gradient round-off must not stall the solver
    rng = np.random.default_rng(11)
    H, _, lb, ub = random_box_qp(rng, n=8)
    f = np.zeros(8)
    f[-1] = 2e10
    sol = qp_solve(box(H, f, lb, ub))
    assert sol.ok
    assert sol.x[-1] == pytest.approx(lb[-1])
    assert sol.iterations < 50


def test_iteration_cap_after_a_row_enters_keeps_multipliers_consistent():
    H = np.eye(3)
    f = np.array([-10.0, -10.0, -10.0])
    p = box(H, f, -np.ones(3), np.ones(3))
    for cap in range(1, 5):
        sol = qp_solve(p, max_iter=cap)
        assert len(sol.multipliers) == len(sol.active)
        assert np.all(np.isfinite(sol.multipliers))
    assert qp_solve(p).ok


def test_kkt_residual_at_unconstrained_optimum():
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    f = np.array([1.0, -1.0])
    p = QpProblem.unconstrained(H, f)
    x = np.linalg.solve(H, -f)
    assert kkt_residual(p, x, []) < 1e-12
    dx = np.array([1e-3, 0.0])
    assert kkt_residual(p, x + dx, []) == pytest.approx(np.abs(H @ dx).max())


def test_kkt_residual_with_zero_multipliers_is_gradient_norm():
    H = np.eye(3) * 2
    f = np.array([1.0, -2.0, 0.5])
    p = QpProblem(H, f, np.eye(3), -10, 10)
    x = np.array([0.3, 0.1, -0.2])
    assert kkt_residual(p, x, np.zeros(3)) == pytest.approx(np.abs(H @ x + f).max())
