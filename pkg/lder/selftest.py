"""Invariant checks run by ``lder selftest``.

The default checks finish in seconds; ``full=True`` adds the slow
representability run. The full property suites live in the pytest tests.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from .dca import dc_components, train_dca
from .dccp import penalty_schedule, train_dccp
from .datasets import kfold_split, synth_pwl
from .loss import finite_diff_grad, grad_mse, mse
from .models import LDerParams, ModelDims, TrainingSet, rng_stream
from .morph import flatten, predict, unflatten
from .qp import QpProblem, kkt_residual, solve_qp
from .stats import wilcoxon_signed_rank
from .trainer_config import CcpConfig, DcaConfig

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    wall_time: float = 0.0

    def as_dict(self) -> Dict[str, object]:
        return {"name": self.name, "passed": self.passed, "detail": self.detail, "wall_time": self.wall_time}


def random_params(rng: np.random.Generator, dims: ModelDims) -> LDerParams:
    return unflatten(rng.standard_normal(dims.flat_length), dims)


def random_known_qp(rng: np.random.Generator, d: int, k: int) -> Tuple[QpProblem, np.ndarray]:
    """Strictly convex QP whose optimum is planted through its KKT conditions."""
    B = rng.standard_normal((d, d))
    Q = B.T @ B + np.eye(d)
    A = rng.standard_normal((k, d))
    x_star = rng.standard_normal(d)
    Ax = A @ x_star
    y_star = np.zeros(k)
    u = Ax + rng.uniform(0.5, 2.0, size=k)
    l = np.full(k, -np.inf)
    for row in rng.choice(k, size=int(rng.integers(0, min(k, d) + 1)), replace=False):
        if rng.random() < 0.5:
            u[row] = Ax[row]
            y_star[row] = rng.uniform(0.5, 2.0)
        else:
            l[row], u[row] = Ax[row], np.inf
            y_star[row] = -rng.uniform(0.5, 2.0)
    c = -Q @ x_star - A.T @ y_star
    return QpProblem(Q=Q, c=c, A=A, u=u, l=l), x_star


def _brute_force(p: LDerParams, x: np.ndarray) -> float:
    first = max(float(np.dot(p.W[j], x) + p.a[j]) for j in range(p.W.shape[0]))
    second = max(float(np.dot(p.M[j], x) + p.b[j]) for j in range(p.M.shape[0]))
    return first - second


def check_predict(rng: np.random.Generator) -> str:
    worst = 0.0
    for _ in range(200):
        dims = ModelDims(n=int(rng.integers(1, 6)), r1=int(rng.integers(1, 5)), r2=int(rng.integers(1, 5)))
        p = random_params(rng, dims)
        x = rng.standard_normal(dims.n)
        worst = max(worst, abs(predict(p, x) - _brute_force(p, x)))
        if not np.array_equal(flatten(unflatten(flatten(p), dims)), flatten(p)):
            raise AssertionError("flatten/unflatten roundtrip changed values")
    if worst > 1e-12:
        raise AssertionError(f"predict differs from brute force by {worst:.3e}")
    return f"max deviation {worst:.1e}"


def check_gradient(rng: np.random.Generator) -> str:
    worst = 0.0
    for _ in range(20):
        dims = ModelDims(n=int(rng.integers(1, 4)), r1=int(rng.integers(1, 4)), r2=int(rng.integers(1, 4)))
        T = TrainingSet(X=rng.standard_normal((10, dims.n)), y=rng.standard_normal(10))
        alpha = rng.standard_normal(dims.flat_length)
        g = grad_mse(unflatten(alpha, dims), T)
        fd = finite_diff_grad(lambda a: mse(unflatten(a, dims), T), alpha)
        worst = max(worst, float(np.max(np.abs(g - fd)) / (1.0 + np.max(np.abs(g)))))
    if worst > 1e-5:
        raise AssertionError(f"gradient relative error {worst:.3e}")
    return f"max relative error {worst:.1e}"


def check_dc_identity(rng: np.random.Generator) -> str:
    worst = 0.0
    dims = ModelDims(n=2, r1=3, r2=2)
    T = TrainingSet(X=rng.standard_normal((15, 2)), y=rng.standard_normal(15))
    anchor = rng.standard_normal(dims.flat_length)
    decomposition = dc_components(T, anchor, dims)
    for _ in range(100):
        alpha = rng.standard_normal(dims.flat_length)
        loss = mse(unflatten(alpha, dims), T)
        gap = abs(decomposition.G(alpha) - decomposition.H(alpha) - loss) / (1.0 + loss)
        worst = max(worst, gap)
    if worst > 1e-9:
        raise AssertionError(f"G - H deviates from the MSE by {worst:.3e}")
    return f"max relative gap {worst:.1e}"


def check_qp(rng: np.random.Generator) -> str:
    worst_x = worst_kkt = 0.0
    for _ in range(20):
        prob, x_star = random_known_qp(rng, int(rng.integers(2, 9)), int(rng.integers(1, 16)))
        sol = solve_qp(prob)
        worst_x = max(worst_x, float(np.max(np.abs(sol.x - x_star))))
        worst_kkt = max(worst_kkt, *kkt_residual(prob, sol.x, sol.duals))
    if worst_x > 1e-5 or worst_kkt > 1e-6:
        raise AssertionError(f"qp error {worst_x:.3e}, kkt residual {worst_kkt:.3e}")
    return f"max error {worst_x:.1e}, max kkt residual {worst_kkt:.1e}"


def check_dca_descent(rng: np.random.Generator) -> str:
    dims = ModelDims(n=2, r1=2, r2=2)
    T, _ = synth_pwl(dims, 40, 0.0, int(rng.integers(0, 2**31)))
    _, report = train_dca(T, dims, DcaConfig(max_outer=10, qp_max_iter=5000, seed=1))
    trace = [report.initial_loss] + report.loss_trace
    rises = [b - a for a, b in zip(trace, trace[1:]) if b > a + 1e-7]
    if rises:
        raise AssertionError(f"dca raised the mse by up to {max(rises):.3e}")
    return f"{report.iterations} outer iterations, mse {trace[0]:.3g} -> {trace[-1]:.3g}"


def check_penalty_trace(rng: np.random.Generator) -> str:
    dims = ModelDims(n=1, r1=1, r2=1)
    T, _ = synth_pwl(dims, 20, 0.1, int(rng.integers(0, 2**31)))
    cfg = CcpConfig(max_outer=6, converge_tol=0.0, t_max=10.0, qp_max_iter=5000, init="random")
    _, report = train_dccp(T, dims, cfg)
    expected = penalty_schedule(cfg, len(report.diagnostics["penalties"]))
    if report.diagnostics["penalties"] != expected:
        raise AssertionError(f"penalties {report.diagnostics['penalties']} != {expected}")
    return f"penalties {expected}"


def check_representability(rng: np.random.Generator) -> str:
    dims = ModelDims(n=2, r1=2, r2=2)
    T, _ = synth_pwl(dims, 200, 0.0, int(rng.integers(0, 2**31)))
    params, report = train_dccp(T, dims, CcpConfig(max_outer=50, seed=int(rng.integers(0, 2**31))))
    loss = mse(params, T)
    if loss > 1e-4:
        raise AssertionError(f"dccp stopped at mse {loss:.3e} on noiseless data")
    return f"mse {loss:.1e} after {report.iterations} outer iterations"


def check_kfold(rng: np.random.Generator) -> str:
    for _ in range(20):
        m = int(rng.integers(2, 60))
        k = int(rng.integers(2, m + 1))
        plan = kfold_split(m, k, int(rng.integers(0, 1000)))
        sizes = plan.sizes()
        if sum(sizes) != m or max(sizes) - min(sizes) > 1:
            raise AssertionError(f"bad fold sizes {sizes} for m={m}")
    return "20 partitions"


def check_wilcoxon(rng: np.random.Generator) -> str:
    res = wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0], [0.0] * 5)
    if res.statistic != 0.0 or abs(res.p_value - 0.0625) > 1e-12:
        raise AssertionError(f"W={res.statistic}, p={res.p_value}")
    return "W=0, p=0.0625"


CHECKS: List[Tuple[str, Callable[[np.random.Generator], str]]] = [
    ("predict-brute-force", check_predict),
    ("gradient-finite-difference", check_gradient),
    ("dc-decomposition", check_dc_identity),
    ("qp-known-optimum", check_qp),
    ("dca-monotone-descent", check_dca_descent),
    ("dccp-penalty-trace", check_penalty_trace),
    ("kfold-partition", check_kfold),
    ("wilcoxon-exact", check_wilcoxon),
]

# Minutes rather than seconds; run with --full.
FULL_CHECKS: List[Tuple[str, Callable[[np.random.Generator], str]]] = [
    ("dccp-representability", check_representability),
]


def run_selftest(seed: int = 0, *, full: bool = False) -> List[CheckResult]:
    results = []
    checks = CHECKS + FULL_CHECKS if full else CHECKS
    for index, (name, check) in enumerate(checks):
        rng = rng_stream(seed, index)
        started = time.perf_counter()
        try:
            detail = check(rng)
            passed = True
        except AssertionError as err:
            detail, passed = str(err), False
        results.append(CheckResult(name=name, passed=passed, detail=detail, wall_time=time.perf_counter() - started))
        logger.info("selftest %s: %s (%s)", name, "ok" if passed else "FAILED", detail)
    return results
