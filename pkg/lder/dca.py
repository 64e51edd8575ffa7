"""DC-programming trainer.

The MSE splits as ``G - H`` with, per sample,

* ``tau1 = max_l <v^l, alpha> - y`` and ``tau2 = max_l <v^{r1+l}, alpha>``,
* ``phi = max(y - <v^{j1}, alpha>, -<v^{r1+j2}, alpha>)`` where ``j1, j2`` are
  the active pieces at the anchor,
* ``G = (2/m) sum((tau1 + phi)^2 + (tau2 + phi)^2)``,
* ``H = (1/m) sum((tau1 + tau2 + 2 phi)^2)``.

``tau1 + phi`` and ``tau2 + phi`` are nonnegative, so both components are
convex. Each outer step minimizes ``G - <beta, alpha>`` through its epigraph
QP in ``(alpha, q, p)``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import DimensionError
from .loss import grad_mse, mse
from .models import (
    TERMINATION_CONVERGED,
    TERMINATION_MAX_ITER,
    TERMINATION_SUBPROBLEM_FAILURE,
    LDerParams,
    ModelDims,
    TrainingSet,
    TrainReport,
)
from .morph import active_indices_batch, flatten, unflatten
from .qp import STATUS_INFEASIBLE, STATUS_MAX_ITER, QpProblem, QpSettings, dump_qp, solve_qp
from .sgd import init_params
from .trainer_config import DcaConfig

logger = logging.getLogger(__name__)

# Largest MSE increase accepted from an inexact subproblem solution.
DESCENT_SLACK = 1e-7


def _check_dims(T: TrainingSet, dims: ModelDims) -> None:
    if T.n != dims.n:
        raise DimensionError(f"training set has {T.n} features, model expects {dims.n}")


def _augmented(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _block_values(alpha: np.ndarray, dims: ModelDims, Xb: np.ndarray) -> np.ndarray:
    """<v^{i,s}, alpha> for every sample i and block s, shape m x (r1 + r2)."""
    blocks = np.asarray(alpha, dtype=np.float64).reshape(dims.blocks, dims.block_size)
    return Xb @ blocks.T


@dataclass(frozen=True, eq=False)
class DcDecomposition:
    """G and H bound to a training set and an anchor."""

    T: TrainingSet
    anchor: np.ndarray
    dims: ModelDims

    def __post_init__(self) -> None:
        _check_dims(self.T, self.dims)
        anchor = np.asarray(self.anchor, dtype=np.float64)
        if anchor.shape != (self.dims.flat_length,):
            raise DimensionError(f"anchor has length {anchor.size}, expected {self.dims.flat_length}")
        j1, j2 = active_indices_batch(unflatten(anchor, self.dims), self.T.X)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "_Xb", _augmented(self.T.X))
        object.__setattr__(self, "_j1", j1)
        object.__setattr__(self, "_j2", j2)

    def parts(self, alpha: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(tau1, tau2, phi) per sample."""
        r1 = self.dims.r1
        values = _block_values(alpha, self.dims, self._Xb)
        rows = np.arange(self.T.m)
        tau1 = np.max(values[:, :r1], axis=1) - self.T.y
        tau2 = np.max(values[:, r1:], axis=1)
        phi = np.maximum(self.T.y - values[rows, self._j1], -values[rows, r1 + self._j2])
        return tau1, tau2, phi

    def phi(self, alpha: np.ndarray) -> np.ndarray:
        return self.parts(alpha)[2]

    def epigraph_values(self, alpha: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        tau1, tau2, phi = self.parts(alpha)
        return tau1 + phi, tau2 + phi

    def G(self, alpha: np.ndarray) -> float:
        u, w = self.epigraph_values(alpha)
        return float(2.0 * np.sum(u * u + w * w) / self.T.m)

    def H(self, alpha: np.ndarray) -> float:
        u, w = self.epigraph_values(alpha)
        s = u + w
        return float(np.sum(s * s) / self.T.m)


def dc_components(T: TrainingSet, anchor: np.ndarray, dims: ModelDims) -> DcDecomposition:
    return DcDecomposition(T=T, anchor=anchor, dims=dims)


def phi(i: int, alpha: np.ndarray, anchor: np.ndarray, T: TrainingSet, dims: ModelDims) -> float:
    if not 0 <= i < T.m:
        raise IndexError(f"sample index {i} out of range 0..{T.m - 1}")
    sample = T.subset(np.array([i]))
    return float(dc_components(sample, anchor, dims).phi(alpha)[0])


def dca_beta(alpha_t: np.ndarray, T: TrainingSet, dims: ModelDims) -> np.ndarray:
    """Subgradient of H at the anchor; coincides with the MSE gradient."""
    _check_dims(T, dims)
    return grad_mse(unflatten(alpha_t, dims), T)


def _difference_rows(Xb: np.ndarray, samples: np.ndarray, plus: np.ndarray, minus: np.ndarray, dims: ModelDims) -> np.ndarray:
    count = samples.size
    rows = np.arange(count)
    out = np.zeros((count, dims.blocks, dims.block_size))
    values = Xb[samples]
    out[rows, plus] += values
    out[rows, minus] -= values
    return out.reshape(count, dims.flat_length)


def assemble_dca_subproblem(alpha_t: np.ndarray, beta_t: np.ndarray, T: TrainingSet, dims: ModelDims) -> QpProblem:
    """Epigraph QP over (alpha, q, p) anchored at ``alpha_t``.

    Rows, for every sample i and piece l:

    * ``<v^l - v^{j1}, alpha> - q_i <= 0``        (l < r1)
    * ``<v^l - v^{r1+j2}, alpha> - q_i <= y_i``   (l < r1)
    * ``<v^{r1+l} - v^{j1}, alpha> - p_i <= -y_i`` (l < r2)
    * ``<v^{r1+l} - v^{r1+j2}, alpha> - p_i <= 0`` (l < r2)
    """
    _check_dims(T, dims)
    alpha_t = np.asarray(alpha_t, dtype=np.float64)
    beta_t = np.asarray(beta_t, dtype=np.float64)
    L = dims.flat_length
    if alpha_t.shape != (L,) or beta_t.shape != (L,):
        raise DimensionError(f"alpha and beta must have length {L}")
    m, r1, r2 = T.m, dims.r1, dims.r2
    Xb = _augmented(T.X)
    j1, j2 = active_indices_batch(unflatten(alpha_t, dims), T.X)

    first = np.repeat(np.arange(m), r1)
    first_l = np.tile(np.arange(r1), m)
    second = np.repeat(np.arange(m), r2)
    second_l = np.tile(r1 + np.arange(r2), m)

    families = [
        (_difference_rows(Xb, first, first_l, j1[first], dims), first, 0, np.zeros(first.size)),
        (_difference_rows(Xb, first, first_l, r1 + j2[first], dims), first, 0, T.y[first]),
        (_difference_rows(Xb, second, second_l, j1[second], dims), second, m, -T.y[second]),
        (_difference_rows(Xb, second, second_l, r1 + j2[second], dims), second, m, np.zeros(second.size)),
    ]
    blocks = []
    bounds = []
    for alpha_rows, samples, offset, upper in families:
        epi = np.zeros((samples.size, 2 * m))
        epi[np.arange(samples.size), offset + samples] = -1.0
        blocks.append(np.hstack([alpha_rows, epi]))
        bounds.append(upper)

    Q = np.concatenate([np.zeros(L), np.full(2 * m, 4.0 / m)])
    c = np.concatenate([-beta_t, np.zeros(2 * m)])
    return QpProblem(Q=Q, c=c, A=np.vstack(blocks), u=np.concatenate(bounds))


def dca_witness(alpha_t: np.ndarray, T: TrainingSet, dims: ModelDims) -> np.ndarray:
    """Feasible point (alpha_t, q, p) with q, p at their epigraph values."""
    decomposition = dc_components(T, alpha_t, dims)
    u, w = decomposition.epigraph_values(decomposition.anchor)
    return np.concatenate([decomposition.anchor, u, w])


def train_dca(
    T: TrainingSet,
    dims: ModelDims,
    cfg: DcaConfig,
    *,
    init: Optional[LDerParams] = None,
    qp_dump_dir: Optional[Union[str, Path]] = None,
    qp_settings: Optional[QpSettings] = None,
) -> Tuple[LDerParams, TrainReport]:
    _check_dims(T, dims)
    started = time.perf_counter()
    params = init if init is not None else init_params(dims, cfg.seed, cfg.init_scale)
    alpha = flatten(params)
    L = dims.flat_length
    prev = mse(params, T)
    report = TrainReport(termination=TERMINATION_MAX_ITER, initial_loss=prev)
    qp_iterations = []
    qp_statuses = []
    warm: Optional[np.ndarray] = None
    warm_duals: Optional[np.ndarray] = None
    beta = np.zeros(L)

    for t in range(1, cfg.max_outer + 1):
        beta = dca_beta(alpha, T, dims)
        prob = assemble_dca_subproblem(alpha, beta, T, dims)
        if qp_dump_dir:
            dump_qp(prob, Path(qp_dump_dir) / f"dca_{t}.json")
        x0 = warm if warm is not None else dca_witness(alpha, T, dims)
        sol = solve_qp(prob, cfg.qp_tol, cfg.qp_max_iter, x0=x0, y0=warm_duals, settings=qp_settings)
        qp_iterations.append(sol.iterations)
        qp_statuses.append(sol.status)
        if sol.status == STATUS_INFEASIBLE or not np.all(np.isfinite(sol.x)):
            report.termination = TERMINATION_SUBPROBLEM_FAILURE
            logger.info("dca: subproblem failed at outer iteration %d (%s)", t, sol.status)
            break
        if sol.status == STATUS_MAX_ITER:
            logger.warning("dca: subproblem %d stopped at max_iter, residuals %.2e/%.2e", t, sol.primal_residual, sol.dual_residual)
        candidate = sol.x[:L]
        loss = mse(unflatten(candidate, dims), T)
        if not math.isfinite(loss) or loss > prev + DESCENT_SLACK:
            report.termination = TERMINATION_SUBPROBLEM_FAILURE
            report.diagnostics["rejected_loss"] = loss
            logger.info("dca: step %d raised mse %.6g -> %.6g, keeping previous iterate", t, prev, loss)
            break
        alpha = candidate
        warm = sol.x
        warm_duals = sol.duals
        report.loss_trace.append(loss)
        report.iterations = t
        logger.debug("dca: outer %d mse=%.6g qp_iter=%d", t, loss, sol.iterations)
        if abs(loss - prev) <= cfg.epsilon * (1.0 + prev):
            report.termination = TERMINATION_CONVERGED
            break
        prev = loss

    report.diagnostics["beta_norm"] = float(np.linalg.norm(beta))
    report.diagnostics["qp_iterations"] = qp_iterations
    report.diagnostics["qp_statuses"] = qp_statuses
    report.wall_time = time.perf_counter() - started
    logger.info("dca: %s after %d outer iterations, mse=%.6g", report.termination, report.iterations, report.final_loss)
    return unflatten(alpha, dims), report
