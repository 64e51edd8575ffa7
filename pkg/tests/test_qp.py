import numpy as np
import pytest

from lder.dccp import assemble_ccp_subproblem, ccp_witness
from lder.errors import DimensionError, DomainError
from lder.models import ModelDims, TrainingSet
from lder.morph import flatten
from lder.sgd import init_params
from lder.qp import (
    STATUS_INFEASIBLE,
    STATUS_MAX_ITER,
    STATUS_SOLVED,
    AdmmSolver,
    QpProblem,
    QpSettings,
    dump_qp,
    kkt_residual,
    load_qp,
    solve_qp,
)


def _known_optimum(seed: int, max_d: int = 8, max_k: int = 15):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, max_d + 1))
    k = int(rng.integers(1, max_k + 1))
    B = rng.standard_normal((d, d))
    Q = B.T @ B + np.eye(d)
    A = rng.standard_normal((k, d))
    x_star = rng.standard_normal(d)
    Ax = A @ x_star
    n_active = int(rng.integers(0, min(k, d) + 1))
    active = rng.choice(k, size=n_active, replace=False)
    y_star = np.zeros(k)
    u = Ax + rng.uniform(0.5, 2.0, size=k)
    l = np.full(k, -np.inf)
    for row in active:
        if rng.random() < 0.5:
            u[row] = Ax[row]
            y_star[row] = rng.uniform(0.5, 2.0)
        else:
            l[row] = Ax[row]
            u[row] = np.inf
            y_star[row] = -rng.uniform(0.5, 2.0)
    c = -Q @ x_star - A.T @ y_star
    return QpProblem(Q=Q, c=c, A=A, u=u, l=l), x_star, y_star


def _bound_problem(upper_form: bool) -> QpProblem:
    # minimize x^2 subject to x >= 1
    if upper_form:
        return QpProblem(Q=np.array([[2.0]]), c=np.zeros(1), A=np.array([[-1.0]]), u=np.array([-1.0]))
    return QpProblem(Q=np.array([[2.0]]), c=np.zeros(1), A=np.array([[1.0]]), u=np.array([np.inf]), l=np.array([1.0]))


def test_active_bound_example() -> None:
    for upper_form in (True, False):
        sol = solve_qp(_bound_problem(upper_form))
        assert sol.status == STATUS_SOLVED
        assert abs(sol.x[0] - 1.0) <= 1e-6


def test_unconstrained_minimizer_is_negative_c() -> None:
    c = np.array([0.5, -2.0, 3.0])
    prob = QpProblem(Q=np.eye(3), c=c, A=np.zeros((0, 3)), u=np.zeros(0))
    sol = solve_qp(prob)
    assert sol.status == STATUS_SOLVED
    assert np.max(np.abs(sol.x + c)) <= 1e-6


def test_two_variable_halfspace() -> None:
    prob = QpProblem(
        Q=np.eye(2),
        c=np.zeros(2),
        A=np.array([[1.0, 1.0]]),
        u=np.array([np.inf]),
        l=np.array([2.0]),
    )
    sol = solve_qp(prob)
    assert sol.status == STATUS_SOLVED
    assert np.max(np.abs(sol.x - 1.0)) <= 1e-6
    assert abs(sol.duals[0] + 1.0) <= 1e-5


def test_kkt_residual_at_exact_points() -> None:
    primal, dual = kkt_residual(_bound_problem(True), np.array([1.0]), np.array([2.0]))
    assert primal <= 1e-12 and dual <= 1e-12
    primal, dual = kkt_residual(_bound_problem(False), np.array([1.0]), np.array([-2.0]))
    assert primal <= 1e-12 and dual <= 1e-12


def test_kkt_residual_interior_point_with_zero_duals() -> None:
    prob, x_star, _ = _known_optimum(3)
    # Shift the bounds so x_star is strictly interior.
    loose = QpProblem(Q=prob.Q, c=prob.c, A=prob.A, u=prob.A @ x_star + 1.0, l=prob.A @ x_star - 1.0)
    x = x_star + 0.01
    primal, dual = kkt_residual(loose, x, np.zeros(loose.k))
    assert primal == 0.0
    assert dual == pytest.approx(float(np.max(np.abs(loose.Q @ x + loose.c))), abs=1e-15)


def test_kkt_residual_drops_wrongly_signed_duals() -> None:
    prob = _bound_problem(False)
    _, dual = kkt_residual(prob, np.array([1.0]), np.array([2.0]))
    assert dual == pytest.approx(2.0)


def test_recovers_kkt_constructed_optima() -> None:
    for seed in range(30):
        prob, x_star, _ = _known_optimum(seed)
        sol = solve_qp(prob)
        assert sol.status == STATUS_SOLVED, seed
        assert np.max(np.abs(sol.x - x_star)) <= 1e-5, seed
        assert max(sol.primal_residual, sol.dual_residual) <= 1e-6
        assert (sol.primal_residual, sol.dual_residual) == kkt_residual(prob, sol.x, sol.duals)


def test_objective_beats_sampled_feasible_points() -> None:
    rng = np.random.default_rng(11)
    for seed in range(5):
        prob, x_star, _ = _known_optimum(100 + seed)
        sol = solve_qp(prob)
        best = prob.objective(sol.x)
        checked = 0
        for _ in range(1000):
            candidate = x_star + rng.normal(scale=0.5, size=prob.d)
            Ax = prob.A @ candidate
            if np.all(Ax <= prob.u) and np.all(Ax >= prob.l):
                checked += 1
                assert best <= prob.objective(candidate) + 1e-9
        assert checked > 0


def test_minimizer_is_scale_invariant() -> None:
    for seed in range(5):
        prob, _, _ = _known_optimum(200 + seed)
        scaled = QpProblem(Q=10.0 * prob.Q, c=10.0 * prob.c, A=prob.A, u=prob.u, l=prob.l)
        a = solve_qp(prob)
        b = solve_qp(scaled)
        assert np.max(np.abs(a.x - b.x)) <= 1e-7


def test_solve_is_deterministic() -> None:
    prob, _, _ = _known_optimum(7)
    first = solve_qp(prob)
    second = solve_qp(prob)
    assert np.array_equal(first.x, second.x)
    assert np.array_equal(first.duals, second.duals)
    assert first.iterations == second.iterations


def test_diagonal_quadratic_term_matches_dense() -> None:
    diag = np.array([1.0, 2.0, 0.0])
    A = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    u = np.array([np.inf, 1.0, 1.0])
    l = np.array([1.5, -np.inf, -np.inf])
    c = np.array([0.0, 0.0, 0.5])
    a = solve_qp(QpProblem(Q=diag, c=c, A=A, u=u, l=l))
    b = solve_qp(QpProblem(Q=np.diag(diag), c=c, A=A, u=u, l=l))
    assert a.status == STATUS_SOLVED and b.status == STATUS_SOLVED
    assert np.max(np.abs(a.x - b.x)) <= 1e-6


def test_warm_start_reaches_same_point() -> None:
    prob, x_star, _ = _known_optimum(21)
    cold = solve_qp(prob)
    warm = solve_qp(prob, x0=x_star + 0.1)
    assert warm.status == STATUS_SOLVED
    assert np.max(np.abs(cold.x - warm.x)) <= 1e-5



def _ccp_problem(m: int = 40, seed: int = 0):
    rng = np.random.default_rng(seed)
    dims = ModelDims(n=2, r1=2, r2=2)
    T = TrainingSet(X=rng.uniform(-1.0, 1.0, size=(m, 2)), y=rng.standard_normal(m))
    alpha = flatten(init_params(dims, seed, 1.0))
    return assemble_ccp_subproblem(alpha, T, 1.0, dims), ccp_witness(alpha, T, dims)


def test_dual_warm_start_reaches_same_point() -> None:
    prob, x_star, _ = _known_optimum(22)
    cold = solve_qp(prob)
    warm = solve_qp(prob, x0=cold.x, y0=cold.duals)
    assert warm.status == STATUS_SOLVED
    assert np.max(np.abs(cold.x - warm.x)) <= 1e-5
    assert np.max(np.abs(warm.x - x_star)) <= 1e-5

    reset = solve_qp(prob, y0=np.full(prob.k, np.nan))
    assert np.max(np.abs(reset.x - x_star)) <= 1e-5
    with pytest.raises(DimensionError):
        solve_qp(prob, y0=np.zeros(prob.k + 1))


def test_sparse_iteration_matches_dense() -> None:
    prob, x0 = _ccp_problem()
    sparse_solver = AdmmSolver(prob, QpSettings(sparse_density=1.0))
    dense_solver = AdmmSolver(prob, QpSettings(sparse_density=0.0))
    assert sparse_solver.is_sparse and not dense_solver.is_sparse
    a = sparse_solver.solve(x0=x0)
    b = dense_solver.solve(x0=x0)
    fa, fb = prob.objective(a.x), prob.objective(b.x)
    assert abs(fa - fb) <= 1e-4 * (1.0 + abs(fb))
    assert AdmmSolver(prob).is_sparse


def test_polish_attempts_are_bounded() -> None:
    prob, x0 = _ccp_problem(m=60, seed=3)
    settings = QpSettings(polish_max_attempts=2)
    solver = AdmmSolver(prob, settings)
    solver.solve(x0=x0)
    assert solver.polish_attempts <= settings.polish_max_attempts + 1

    quiet = AdmmSolver(prob, QpSettings(polish_max_attempts=0))
    sol = quiet.solve(max_iter=200, x0=x0)
    assert quiet.polish_attempts <= 1
    assert np.all(np.isfinite(sol.x))


@pytest.mark.slow
def test_recovers_two_hundred_known_optima() -> None:
    for seed in range(200):
        prob, x_star, _ = _known_optimum(1000 + seed, max_d=10, max_k=20)
        sol = solve_qp(prob)
        assert sol.status == STATUS_SOLVED, seed
        assert np.max(np.abs(sol.x - x_star)) <= 1e-5, seed
        assert max(kkt_residual(prob, sol.x, sol.duals)) <= 1e-6, seed

def test_max_iter_returns_best_iterate() -> None:
    prob = QpProblem(Q=np.eye(2), c=np.zeros(2), A=np.array([[1.0, 1.0]]), u=np.array([np.inf]), l=np.array([2.0]))
    sol = solve_qp(prob, max_iter=1, settings=QpSettings(polish=False))
    assert sol.status == STATUS_MAX_ITER
    assert sol.iterations == 1
    assert np.all(np.isfinite(sol.x))


def test_contradictory_bounds_are_never_solved() -> None:
    prob = QpProblem(
        Q=np.eye(1),
        c=np.zeros(1),
        A=np.array([[1.0], [1.0]]),
        u=np.array([-1.0, np.inf]),
        l=np.array([-np.inf, 1.0]),
    )
    sol = solve_qp(prob, max_iter=2000)
    assert sol.status in (STATUS_INFEASIBLE, STATUS_MAX_ITER)
    assert sol.primal_residual >= 0.99


def test_problem_validation() -> None:
    with pytest.raises(DimensionError):
        QpProblem(Q=np.eye(3), c=np.zeros(2), A=np.zeros((1, 2)), u=np.zeros(1))
    with pytest.raises(DimensionError):
        QpProblem(Q=np.eye(2), c=np.zeros(2), A=np.zeros((1, 3)), u=np.zeros(1))
    with pytest.raises(DomainError):
        QpProblem(Q=np.array([[1.0, 2.0], [0.0, 1.0]]), c=np.zeros(2), A=np.zeros((0, 2)), u=np.zeros(0))
    with pytest.raises(DomainError):
        QpProblem(Q=np.diag([1.0, -1.0]), c=np.zeros(2), A=np.zeros((0, 2)), u=np.zeros(0))
    with pytest.raises(DomainError):
        QpProblem(Q=np.eye(1), c=np.zeros(1), A=np.ones((1, 1)), u=np.zeros(1), l=np.ones(1))
    with pytest.raises(DomainError):
        solve_qp(_bound_problem(True), tol=0.0)


def test_dump_and_load(tmp_path) -> None:
    prob, _, _ = _known_optimum(5)
    path = dump_qp(prob, tmp_path / "dumps" / "p.json")
    again = load_qp(path)
    assert np.array_equal(again.Q, prob.Q)
    assert np.array_equal(again.c, prob.c)
    assert np.array_equal(again.A, prob.A)
    assert np.array_equal(again.u, prob.u)
    assert np.array_equal(again.l, prob.l)
