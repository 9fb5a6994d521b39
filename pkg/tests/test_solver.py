import numpy as np
import pytest

from delaynoether.parsing import parse_expr
from delaynoether.problem import DelayedVariationalProblem, Prehistory
from delaynoether.solver import SolveConfig, SolverError, discretize, initial_guess, solve
from delaynoether.verify import gradient_check

X = parse_expr


def vp(L, tau=0.5, t1=0.0, t2=2.0, pre=0.0, terminal=(1.0,)):
    pre = Prehistory.constant([pre], t1 - tau, t1) if not isinstance(pre, Prehistory) else pre
    return DelayedVariationalProblem(1, X(L), tau, t1, t2, pre, terminal)


def test_discretize_example1_coarse(ex1):
    obj = discretize(ex1, 0.5)
    assert obj.k == 2 and obj.M == 6
    np.testing.assert_allclose(obj.grid[obj.integration_nodes], [0, 0.5, 1, 1.5, 2, 2.5])
    np.testing.assert_allclose(obj.grid[obj.free_nodes], [0.5, 1, 1.5, 2, 2.5])


def test_free_endpoint_without_terminal():
    obj = discretize(vp("dq1^2", terminal=None), 0.25)
    assert obj.grid[obj.free_nodes][-1] == pytest.approx(2.0)


def test_non_commensurate_step_rejected(ex1):
    with pytest.raises(ValueError):
        discretize(ex1, 0.3)
    with pytest.raises(ValueError):
        discretize(ex1, 1.0)  # k = 1


def test_zero_gradient_at_constant_trajectory():
    obj = discretize(vp("dq1^2 + dq1_tau^2", pre=0.7, terminal=None), 0.1)
    x = np.full(obj.size, 0.7)
    assert np.max(np.abs(obj.gradient(x))) == 0.0


def test_gradient_matches_finite_differences_on_quartic():
    prob = vp("q1^2*dq1^2 + dq1_tau^4/4 + q1*q1_tau*dq1 - t*q1^3", pre=Prehistory.from_exprs([X("t/2")], -0.5, 0))
    obj = discretize(prob, 0.1)
    x = np.random.default_rng(1).uniform(-1, 1, obj.size)
    assert gradient_check(obj, x) <= 1e-6


def test_hessian_matches_gradient_differences():
    prob = vp("q1^2*dq1^2 + dq1*dq1_tau + q1_tau^2*q1")
    obj = discretize(prob, 0.1)
    x = np.random.default_rng(2).uniform(-1, 1, obj.size)
    np.testing.assert_allclose(obj.hessian(x), obj._fd_hessian(x), rtol=1e-5, atol=1e-5)


def _normal_equations_example1(h):
    """Independent discrete optimum of h*sum (v_i + v_{i-k})^2 by least squares."""
    k, M = round(1 / h), round(3 / h)
    N = k + M
    t = -1 + h * np.arange(N + 1)
    free = np.arange(k + 1, N)
    fixed = np.zeros(N + 1)
    fixed[: k + 1] = -t[: k + 1]
    fixed[N] = 2.0
    rows, rhs = [], []
    for i in range(k, N):
        row = np.zeros(N + 1)
        for j in (i, i - k):
            row[j + 1] += 1 / h
            row[j] -= 1 / h
        rows.append(np.sqrt(h) * row)
    A = np.array(rows)
    d = A @ fixed
    x, *_ = np.linalg.lstsq(A[:, free], -d, rcond=None)
    Q = fixed.copy()
    Q[free] = x
    return t, Q


def test_example1_matches_normal_equations(ex1):
    rep = solve(ex1, SolveConfig(h=0.01))
    assert rep.converged and rep.grad_norm <= 1e-10 and rep.iterations <= 3
    t, Q = _normal_equations_example1(0.01)
    np.testing.assert_allclose(rep.trajectory.states[:, 0], Q, atol=1e-9)
    np.testing.assert_allclose(rep.trajectory.grid, t, atol=1e-12)


def test_example1_hand_solution(ex1):
    # minimising (a-1)^2 + (a+b)^2 + (b+c)^2 with a+b+c = 2 gives slopes 1.5, -1.5, 2
    rep = solve(ex1, SolveConfig(h=0.05))
    tr = rep.trajectory
    v = np.diff(tr.states[:, 0]) / tr.h
    mid = tr.grid[:-1] + tr.h / 2
    expected = np.select([mid < 0, mid < 1, mid < 2], [-1.0, 1.5, -1.5], 2.0)
    np.testing.assert_allclose(v, expected, atol=1e-8)
    assert rep.objective == pytest.approx(0.5, abs=1e-10)


def test_free_particle_is_straight_line():
    rep = solve(vp("dq1^2"), SolveConfig(h=0.05))
    tr = rep.trajectory
    inside = tr.grid >= 0
    np.testing.assert_allclose(tr.states[inside, 0], tr.grid[inside] / 2.0, atol=1e-10)


def test_natural_boundary_gives_constant():
    rep = solve(vp("dq1^2", terminal=None), SolveConfig(h=0.05))
    assert rep.converged
    np.testing.assert_allclose(rep.trajectory.states[:, 0], 0.0, atol=1e-12)
    assert rep.objective == 0.0


def test_delay_free_convergence_order():
    # q'' = -q, q(0) = 0, q(2) = 1: q = sin t / sin 2
    prob = vp("dq1^2/2 - q1^2/2")
    errors = []
    for h in (0.02, 0.01, 0.005):
        tr = solve(prob, SolveConfig(h=h)).trajectory
        inside = tr.grid >= 0
        exact = np.sin(tr.grid[inside]) / np.sin(2.0)
        errors.append(np.max(np.abs(tr.states[inside, 0] - exact)))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 0.9), (errors, orders)


def test_descent_and_determinism():
    prob = vp("dq1^4/4 + q1^2 + dq1*dq1_tau")
    a = solve(prob, SolveConfig(h=0.05))
    b = solve(prob, SolveConfig(h=0.05))
    assert a.converged
    assert all(y <= x for x, y in zip(a.history, a.history[1:]))
    assert np.array_equal(a.trajectory.states, b.trajectory.states)
    assert a.objective == b.objective and a.iterations == b.iterations


def test_non_polynomial_lagrangian_uses_numeric_hessian():
    prob = vp("dq1^2/2 + cos(q1)")
    rep = solve(prob, SolveConfig(h=0.05, gtol=1e-9))
    assert rep.converged


def test_iteration_budget_reported_not_raised(ex1):
    rep = solve(ex1, SolveConfig(h=0.1, max_iter=0))
    assert not rep.converged and rep.iterations == 0
    assert rep.grad_norm > rep.gtol


def test_nan_lagrangian_reports_node():
    prob = vp("log(q1) + dq1^2", pre=-1.0)
    with pytest.raises(SolverError) as info:
        solve(prob, SolveConfig(h=0.1))
    assert info.value.node is not None


def test_initial_guess_is_linear(ex1):
    obj = discretize(ex1, 0.5)
    np.testing.assert_allclose(initial_guess(obj), np.array([1, 2, 3, 4, 5]) / 3.0)
