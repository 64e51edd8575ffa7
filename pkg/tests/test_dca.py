import numpy as np
import pytest

from lder.datasets import synth_pwl
from lder.dca import (
    assemble_dca_subproblem,
    dc_components,
    dca_beta,
    dca_witness,
    phi,
    train_dca,
)
from lder.loss import grad_mse, mse
from lder.models import TERMINATION_CONVERGED, ModelDims, TrainingSet
from lder.morph import piece_values, predict_batch, unflatten
from lder.qp import solve_qp
from lder.sgd import init_params
from lder.trainer_config import DcaConfig


def _instance(seed: int, n: int = 2, r1: int = 2, r2: int = 2, m: int = 12):
    rng = np.random.default_rng(seed)
    dims = ModelDims(n=n, r1=r1, r2=r2)
    T = TrainingSet(X=rng.standard_normal((m, n)), y=rng.standard_normal(m))
    return rng, dims, T


def _noisy_affine(m: int = 30, seed: int = 0) -> TrainingSet:
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(m, 2))
    y = X @ np.array([1.5, -0.5]) + 0.3 + rng.normal(0.0, 0.1, size=m)
    return TrainingSet(X=X, y=y)


def _least_squares_mse(T: TrainingSet) -> float:
    A = np.hstack([T.X, np.ones((T.m, 1))])
    coef, *_ = np.linalg.lstsq(A, T.y, rcond=None)
    residual = T.y - A @ coef
    return float(np.mean(residual * residual))


def test_phi_at_anchor() -> None:
    rng, dims, T = _instance(0)
    anchor = rng.standard_normal(dims.flat_length)
    first, second = piece_values(unflatten(anchor, dims), T.X)
    for i in range(T.m):
        tau1 = np.max(first[i]) - T.y[i]
        tau2 = np.max(second[i])
        assert phi(i, anchor, anchor, T, dims) == pytest.approx(max(-tau1, -tau2), abs=1e-12)
    with pytest.raises(IndexError):
        phi(T.m, anchor, anchor, T, dims)


def test_phi_is_convex() -> None:
    for r in (1, 3):
        rng, dims, T = _instance(1, r1=r, r2=r)
        anchor = rng.standard_normal(dims.flat_length)
        for _ in range(300):
            a, b = rng.standard_normal(dims.flat_length), rng.standard_normal(dims.flat_length)
            lam = float(rng.uniform())
            i = int(rng.integers(0, T.m))
            mixed = phi(i, lam * a + (1 - lam) * b, anchor, T, dims)
            bound = lam * phi(i, a, anchor, T, dims) + (1 - lam) * phi(i, b, anchor, T, dims)
            assert mixed <= bound + 1e-10


def test_decomposition_identity() -> None:
    for seed in range(10):
        rng, dims, T = _instance(seed, r1=3, r2=2, m=15)
        decomposition = dc_components(T, rng.standard_normal(dims.flat_length), dims)
        for _ in range(100):
            alpha = 2.0 * rng.standard_normal(dims.flat_length)
            loss = mse(unflatten(alpha, dims), T)
            G, H = decomposition.G(alpha), decomposition.H(alpha)
            assert G >= 0.0 and H >= 0.0
            assert abs(G - H - loss) <= 1e-9 * (1.0 + loss)


def test_epigraph_values_are_nonnegative() -> None:
    rng, dims, T = _instance(3)
    decomposition = dc_components(T, rng.standard_normal(dims.flat_length), dims)
    for _ in range(100):
        u, w = decomposition.epigraph_values(rng.standard_normal(dims.flat_length))
        assert np.all(u >= 0.0) and np.all(w >= 0.0)


def test_single_sample_matches_expanded_polynomial() -> None:
    rng = np.random.default_rng(4)
    dims = ModelDims(n=1, r1=1, r2=1)
    x, y = 0.7, -0.4
    T = TrainingSet(X=np.array([[x]]), y=np.array([y]))
    anchor = rng.standard_normal(dims.flat_length)
    decomposition = dc_components(T, anchor, dims)
    for _ in range(20):
        w, a, m_, b = rng.standard_normal(4)
        alpha = np.array([w, a, m_, b])
        tau1 = w * x + a - y
        tau2 = m_ * x + b
        ph = max(-tau1, -tau2)
        assert decomposition.G(alpha) == pytest.approx(2.0 * ((tau1 + ph) ** 2 + (tau2 + ph) ** 2), rel=1e-12, abs=1e-12)
        assert decomposition.H(alpha) == pytest.approx((tau1 + tau2 + 2 * ph) ** 2, rel=1e-12, abs=1e-12)


def test_beta_matches_gradient_and_is_subgradient_of_h() -> None:
    rng, dims, T = _instance(5)
    alpha_t = rng.standard_normal(dims.flat_length)
    beta = dca_beta(alpha_t, T, dims)
    assert np.max(np.abs(beta - grad_mse(unflatten(alpha_t, dims), T))) <= 1e-12

    decomposition = dc_components(T, alpha_t, dims)
    h_t = decomposition.H(alpha_t)
    for _ in range(500):
        alpha = alpha_t + rng.standard_normal(dims.flat_length)
        assert decomposition.H(alpha) >= h_t + float(beta @ (alpha - alpha_t)) - 1e-9


def test_beta_vanishes_at_zero_residuals() -> None:
    rng, dims, T = _instance(6)
    alpha = rng.standard_normal(dims.flat_length)
    exact = TrainingSet(X=T.X, y=predict_batch(unflatten(alpha, dims), T.X))
    assert np.all(dca_beta(alpha, exact, dims) == 0.0)


def test_subproblem_shape_and_witness() -> None:
    for seed in range(5):
        rng, dims, T = _instance(seed, r1=3, r2=2, m=9)
        alpha_t = rng.standard_normal(dims.flat_length)
        prob = assemble_dca_subproblem(alpha_t, dca_beta(alpha_t, T, dims), T, dims)
        assert prob.k == 2 * T.m * (dims.r1 + dims.r2)
        assert prob.d == dims.flat_length + 2 * T.m
        x0 = dca_witness(alpha_t, T, dims)
        assert np.all(prob.A @ x0 <= prob.u + 1e-9)


def test_subproblem_minimizes_convex_surrogate() -> None:
    rng = np.random.default_rng(7)
    dims = ModelDims(n=1, r1=1, r2=1)
    T = TrainingSet(X=np.array([[0.8]]), y=np.array([1.3]))
    alpha_t = rng.standard_normal(dims.flat_length)
    beta = dca_beta(alpha_t, T, dims)
    decomposition = dc_components(T, alpha_t, dims)

    sol = solve_qp(assemble_dca_subproblem(alpha_t, beta, T, dims))
    alpha_star = sol.x[: dims.flat_length]

    def surrogate(alpha: np.ndarray) -> float:
        return decomposition.G(alpha) - float(beta @ alpha)

    best = surrogate(alpha_star)
    grid = np.linspace(-3.0, 3.0, 13)
    for w in grid:
        for a in grid:
            for m_ in grid:
                for b in grid:
                    assert best <= surrogate(np.array([w, a, m_, b])) + 1e-6


def test_zero_loss_start_stops_immediately() -> None:
    dims = ModelDims(n=2, r1=2, r2=2)
    truth = init_params(dims, 3, 1.0)
    X = np.random.default_rng(8).uniform(-1.0, 1.0, size=(20, 2))
    T = TrainingSet(X=X, y=predict_batch(truth, X))
    params, report = train_dca(T, dims, DcaConfig(seed=3))
    assert report.termination == TERMINATION_CONVERGED
    assert report.iterations <= 2
    assert mse(params, T) <= 1e-8


def test_descent_is_monotone() -> None:
    dims = ModelDims(n=2, r1=2, r2=2)
    for seed in range(2):
        T, _ = synth_pwl(dims, 40, 0.0, seed=seed)
        params, report = train_dca(T, dims, DcaConfig(max_outer=15, qp_max_iter=5000, seed=seed + 10))
        trace = [report.initial_loss] + report.loss_trace
        assert all(b <= a + 1e-7 for a, b in zip(trace, trace[1:]))
        assert report.final_loss < report.initial_loss
        assert mse(params, T) == pytest.approx(report.final_loss, abs=1e-12)
        assert len(report.diagnostics["qp_iterations"]) >= report.iterations


@pytest.mark.slow
def test_descent_terminates_by_epsilon_on_ten_instances() -> None:
    dims = ModelDims(n=2, r1=2, r2=2)
    for seed in range(10):
        T, _ = synth_pwl(dims, 100, 0.05, seed=20 + seed)
        _, report = train_dca(T, dims, DcaConfig(seed=seed))
        assert report.termination == TERMINATION_CONVERGED
        assert report.iterations <= 200
        trace = [report.initial_loss] + report.loss_trace
        assert all(b <= a + 1e-7 for a, b in zip(trace, trace[1:]))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_noiseless_model_is_fitted(seed: int) -> None:
    dims = ModelDims(n=2, r1=2, r2=2)
    T, _ = synth_pwl(dims, 200, 0.0, seed=seed)
    params, report = train_dca(T, dims, DcaConfig(max_outer=200, seed=100 + seed))
    assert report.iterations <= 200
    assert mse(params, T) <= 1e-2


def test_affine_data_reaches_least_squares() -> None:
    T = _noisy_affine()
    dims = ModelDims(n=2, r1=1, r2=1)
    params, report = train_dca(T, dims, DcaConfig(seed=2))
    assert mse(params, T) - _least_squares_mse(T) <= 1e-5


def test_subproblems_are_dumped(tmp_path) -> None:
    T = _noisy_affine(m=10)
    dims = ModelDims(n=2, r1=1, r2=1)
    _, report = train_dca(T, dims, DcaConfig(max_outer=2, seed=0), qp_dump_dir=tmp_path)
    dumped = sorted(p.name for p in tmp_path.iterdir())
    assert dumped[0] == "dca_1.json"
    assert len(dumped) == len(report.diagnostics["qp_statuses"])


def test_dimension_mismatch_is_rejected() -> None:
    _, dims, T = _instance(9)
    with pytest.raises(ValueError):
        train_dca(T, ModelDims(n=3, r1=2, r2=2), DcaConfig())
    with pytest.raises(ValueError):
        assemble_dca_subproblem(np.zeros(3), np.zeros(3), T, dims)
