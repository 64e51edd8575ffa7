"""Penalty convex-concave trainer.

Each sample contributes the equality ``delta_a(W x) + xi = delta_b(M x) + y``,
relaxed in both directions with one shared slack ``s >= 0``. The subtracted
branch in each direction is replaced by its tangent at the current iterate,
which keeps every subproblem a QP over ``(alpha, xi, s)``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .dca import train_dca
from .errors import DimensionError, DomainError
from .loss import SparseAlphaVec, indicator_vector, mse
from .models import (
    TERMINATION_CONVERGED,
    TERMINATION_MAX_ITER,
    TERMINATION_SUBPROBLEM_FAILURE,
    LDerParams,
    ModelDims,
    TrainingSet,
    TrainReport,
)
from .morph import active_indices_batch, flatten, piece_values, unflatten
from .qp import STATUS_INFEASIBLE, STATUS_MAX_ITER, QpProblem, QpSettings, dump_qp, solve_qp
from .sgd import init_params, train_sgd
from .trainer_config import CcpConfig, DcaConfig, SgdConfig

logger = logging.getLogger(__name__)

BRANCH_A = "dilation-a"
BRANCH_B = "dilation-b"


def _check_dims(T: TrainingSet, dims: ModelDims) -> None:
    if T.n != dims.n:
        raise DimensionError(f"training set has {T.n} features, model expects {dims.n}")


def branch_value(branch: str, alpha: np.ndarray, x: np.ndarray, dims: ModelDims) -> float:
    first, second = piece_values(unflatten(alpha, dims), np.asarray(x, dtype=np.float64)[None, :])
    if branch == BRANCH_A:
        return float(np.max(first[0]))
    if branch == BRANCH_B:
        return float(np.max(second[0]))
    raise DomainError(f"unknown branch: {branch}")


@dataclass(frozen=True, eq=False)
class AffineFunctional:
    """``value(alpha) = anchor_value + <gradient, alpha - anchor>``."""

    anchor: np.ndarray
    anchor_value: float
    gradient: SparseAlphaVec

    def __call__(self, alpha: np.ndarray) -> float:
        return self.anchor_value + self.gradient.dot(np.asarray(alpha, dtype=np.float64) - self.anchor)


def linearize_branch(branch: str, alpha_k: np.ndarray, x: np.ndarray, dims: ModelDims) -> AffineFunctional:
    """Tangent minorant of a max-affine branch at ``alpha_k``."""
    anchor = np.asarray(alpha_k, dtype=np.float64)
    value = branch_value(branch, anchor, x, dims)
    p = unflatten(anchor, dims)
    j1, j2 = active_indices_batch(p, np.asarray(x, dtype=np.float64)[None, :])
    block = int(j1[0]) if branch == BRANCH_A else dims.r1 + int(j2[0])
    return AffineFunctional(anchor=anchor.copy(), anchor_value=value, gradient=indicator_vector(x, block, dims))


def _augmented(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def assemble_ccp_subproblem(alpha_k: np.ndarray, T: TrainingSet, t_k: float, dims: ModelDims) -> QpProblem:
    """Penalized QP over (alpha, xi, s).

    Rows, for every sample i:

    * ``<v^l - v^{r1+j2}, alpha> + xi_i - s_i <= y_i``         (l < r1)
    * ``<v^{r1+l} - v^{j1}, alpha> - xi_i - s_i <= -y_i``      (l < r2)
    * ``s_i >= 0``
    """
    _check_dims(T, dims)
    if not t_k > 0:
        raise DomainError(f"penalty must be positive, got {t_k}")
    alpha_k = np.asarray(alpha_k, dtype=np.float64)
    L = dims.flat_length
    if alpha_k.shape != (L,):
        raise DimensionError(f"alpha has length {alpha_k.size}, expected {L}")
    m, r1, r2 = T.m, dims.r1, dims.r2
    Xb = _augmented(T.X)
    j1, j2 = active_indices_batch(unflatten(alpha_k, dims), T.X)

    def rows_for(samples: np.ndarray, plus: np.ndarray, minus: np.ndarray, xi_sign: float) -> np.ndarray:
        count = samples.size
        idx = np.arange(count)
        alpha_part = np.zeros((count, dims.blocks, dims.block_size))
        alpha_part[idx, plus] += Xb[samples]
        alpha_part[idx, minus] -= Xb[samples]
        extra = np.zeros((count, 2 * m))
        extra[idx, samples] = xi_sign
        extra[idx, m + samples] = -1.0
        return np.hstack([alpha_part.reshape(count, L), extra])

    first = np.repeat(np.arange(m), r1)
    second = np.repeat(np.arange(m), r2)
    upper_rows = rows_for(first, np.tile(np.arange(r1), m), r1 + j2[first], 1.0)
    lower_rows = rows_for(second, np.tile(r1 + np.arange(r2), m), j1[second], -1.0)
    slack_rows = np.zeros((m, L + 2 * m))
    slack_rows[np.arange(m), L + m + np.arange(m)] = 1.0

    A = np.vstack([upper_rows, lower_rows, slack_rows])
    u = np.concatenate([T.y[first], -T.y[second], np.full(m, np.inf)])
    l = np.concatenate([np.full(first.size + second.size, -np.inf), np.zeros(m)])
    Q = np.concatenate([np.zeros(L), np.full(m, 2.0 / m), np.zeros(m)])
    c = np.concatenate([np.zeros(L + m), np.full(m, float(t_k))])
    return QpProblem(Q=Q, c=c, A=A, u=u, l=l)


def ccp_witness(alpha_k: np.ndarray, T: TrainingSet, dims: ModelDims) -> np.ndarray:
    """Feasible point with xi at the equality residual and zero slack."""
    alpha_k = np.asarray(alpha_k, dtype=np.float64)
    first, second = piece_values(unflatten(alpha_k, dims), T.X)
    xi = np.max(second, axis=1) + T.y - np.max(first, axis=1)
    return np.concatenate([alpha_k, xi, np.zeros(T.m)])


def penalty_schedule(cfg: CcpConfig, count: int) -> list:
    out = []
    t = cfg.t0
    for _ in range(count):
        out.append(t)
        t = min(cfg.mu * t, cfg.t_max)
    return out


def initial_params(
    T: TrainingSet,
    dims: ModelDims,
    cfg: CcpConfig,
    seed: int,
    *,
    qp_settings: Optional[QpSettings] = None,
) -> Tuple[LDerParams, Dict[str, Any]]:
    """Starting point of one run: the random draw, optionally refined by SGD or DCA."""
    start = init_params(dims, seed, cfg.init_scale)
    if cfg.init == "random":
        return start, {"init": "random"}
    if cfg.init == "sgd":
        params, report = train_sgd(T, dims, SgdConfig(seed=seed, init_scale=cfg.init_scale), init=start)
    elif cfg.init == "dca":
        dca_cfg = DcaConfig(
            max_outer=cfg.init_outer,
            qp_tol=cfg.qp_tol,
            qp_max_iter=cfg.qp_max_iter,
            seed=seed,
            init_scale=cfg.init_scale,
        )
        params, report = train_dca(T, dims, dca_cfg, init=start, qp_settings=qp_settings)
    else:
        raise DomainError(f"unknown dccp init: {cfg.init}")
    return params, {
        "init": cfg.init,
        "random_loss": report.initial_loss,
        "init_loss": mse(params, T),
        "init_iterations": report.iterations,
        "init_termination": report.termination,
    }


def _ccp_run(
    T: TrainingSet,
    dims: ModelDims,
    cfg: CcpConfig,
    params: LDerParams,
    qp_dump_dir: Optional[Union[str, Path]],
    qp_settings: Optional[QpSettings],
) -> Tuple[LDerParams, TrainReport]:
    alpha = flatten(params)
    L, m = dims.flat_length, T.m
    initial = mse(params, T)
    report = TrainReport(termination=TERMINATION_MAX_ITER, initial_loss=initial)
    best_alpha, best_loss, best_iteration = alpha, initial, 0
    penalties, slacks, objectives = [], [], []
    qp_iterations, qp_statuses = [], []
    prev_objective: Optional[float] = None
    duals: Optional[np.ndarray] = None
    t = cfg.t0

    for k in range(1, cfg.max_outer + 1):
        prob = assemble_ccp_subproblem(alpha, T, t, dims)
        if qp_dump_dir:
            dump_qp(prob, Path(qp_dump_dir) / f"dccp_{k}.json")
        sol = solve_qp(
            prob,
            cfg.qp_tol,
            cfg.qp_max_iter,
            x0=ccp_witness(alpha, T, dims),
            y0=duals,
            settings=qp_settings,
        )
        qp_iterations.append(sol.iterations)
        qp_statuses.append(sol.status)
        if sol.status == STATUS_INFEASIBLE or not np.all(np.isfinite(sol.x)):
            report.termination = TERMINATION_SUBPROBLEM_FAILURE
            logger.info("dccp: subproblem failed at outer iteration %d (%s)", k, sol.status)
            break
        if sol.status == STATUS_MAX_ITER:
            logger.warning("dccp: subproblem %d stopped at max_iter, residuals %.2e/%.2e", k, sol.primal_residual, sol.dual_residual)

        alpha = sol.x[:L]
        duals = sol.duals
        slack = float(np.sum(np.maximum(sol.x[L + m :], 0.0)))
        objective = prob.objective(sol.x)
        loss = mse(unflatten(alpha, dims), T)
        if not math.isfinite(loss):
            report.termination = TERMINATION_SUBPROBLEM_FAILURE
            break
        penalties.append(t)
        slacks.append(slack)
        objectives.append(objective)
        report.loss_trace.append(loss)
        report.iterations = k
        if loss < best_loss:
            best_alpha, best_loss, best_iteration = alpha, loss, k
        logger.debug("dccp: outer %d t=%.3g mse=%.6g slack=%.3g obj=%.6g", k, t, loss, slack, objective)

        if prev_objective is not None and abs(objective - prev_objective) <= cfg.converge_tol * (1.0 + abs(prev_objective)) and slack <= cfg.slack_tol:
            report.termination = TERMINATION_CONVERGED
            break
        prev_objective = objective
        t = min(cfg.mu * t, cfg.t_max)

    report.diagnostics.update(
        {
            "penalties": penalties,
            "slacks": slacks,
            "objectives": objectives,
            "qp_iterations": qp_iterations,
            "qp_statuses": qp_statuses,
            "best_iteration": best_iteration,
            "best_loss": best_loss,
        }
    )
    return unflatten(best_alpha, dims), report


def train_dccp(
    T: TrainingSet,
    dims: ModelDims,
    cfg: CcpConfig,
    *,
    init: Optional[LDerParams] = None,
    qp_dump_dir: Optional[Union[str, Path]] = None,
    qp_settings: Optional[QpSettings] = None,
) -> Tuple[LDerParams, TrainReport]:
    """Penalty CCP from ``cfg.restarts`` starting points; the lowest train MSE wins.

    Start ``r`` uses seed ``cfg.seed + r``. An explicit ``init`` replaces the
    first starting point only.
    """
    _check_dims(T, dims)
    if not cfg.mu > 1 or cfg.t0 > cfg.t_max:
        raise DomainError("penalty schedule needs mu > 1 and t0 <= t_max")
    if cfg.restarts < 1:
        raise DomainError(f"restarts must be >= 1, got {cfg.restarts}")
    started = time.perf_counter()
    best: Optional[Tuple[LDerParams, TrainReport, Dict[str, Any]]] = None
    runs: List[Dict[str, Any]] = []

    for r in range(cfg.restarts):
        seed = cfg.seed + r
        if r == 0 and init is not None:
            start, info = init, {"init": "given"}
        else:
            start, info = initial_params(T, dims, cfg, seed, qp_settings=qp_settings)
        dump = qp_dump_dir
        if qp_dump_dir and cfg.restarts > 1:
            dump = Path(qp_dump_dir) / f"restart{r}"
        params, report = _ccp_run(T, dims, cfg, start, dump, qp_settings)
        loss = report.diagnostics["best_loss"]
        runs.append({"seed": seed, "best_loss": loss, "iterations": report.iterations, "termination": report.termination, **info})
        logger.debug("dccp: start %d (seed %d, %s) best mse=%.6g", r, seed, info["init"], loss)
        if best is None or loss < best[1].diagnostics["best_loss"]:
            best = (params, report, info)

    params, report, info = best
    report.diagnostics.update(info)
    report.diagnostics["restarts"] = runs
    report.wall_time = time.perf_counter() - started
    logger.info(
        "dccp: %s after %d outer iterations, best mse=%.6g over %d start(s)",
        report.termination,
        report.iterations,
        report.diagnostics["best_loss"],
        cfg.restarts,
    )
    return params, report
