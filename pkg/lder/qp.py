"""Convex quadratic programs solved by an over-relaxed alternating direction method.

Problems have the form::

    minimize    0.5 * x'Qx + c'x
    subject to  l <= Ax <= u

Multipliers are signed: stationarity reads ``Qx + c + A'y = 0`` with
``y >= 0`` on rows pressing against ``u`` and ``y <= 0`` on rows pressing
against ``l``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import linalg, sparse

from .errors import DimensionError, DomainError, LoadError

logger = logging.getLogger(__name__)

STATUS_SOLVED = "solved"
STATUS_MAX_ITER = "max_iter"
STATUS_INFEASIBLE = "infeasible-suspected"

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 20000

_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_EQUALITY_GAP = 1e-4
_DUAL_BLOWUP = 1e12


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Quadratic term ``Q`` is either a dense d x d matrix or a length-d diagonal."""

    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray
    u: np.ndarray
    l: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        c = np.asarray(self.c, dtype=np.float64)
        if c.ndim != 1:
            raise DimensionError(f"c must be a vector, got shape {c.shape}")
        d = c.size
        Q = np.asarray(self.Q, dtype=np.float64)
        if Q.ndim == 1:
            if Q.shape != (d,):
                raise DimensionError(f"diagonal Q has length {Q.size}, expected {d}")
        elif Q.shape != (d, d):
            raise DimensionError(f"Q has shape {Q.shape}, expected ({d}, {d})")
        A = np.asarray(self.A, dtype=np.float64)
        if A.ndim == 1 and A.size == 0:
            A = A.reshape(0, d)
        if A.ndim != 2 or A.shape[1] != d:
            raise DimensionError(f"A has shape {A.shape}, expected (k, {d})")
        k = A.shape[0]
        u = np.asarray(self.u, dtype=np.float64).reshape(-1)
        l = np.full(k, -np.inf) if self.l is None else np.asarray(self.l, dtype=np.float64).reshape(-1)
        if u.shape != (k,) or l.shape != (k,):
            raise DimensionError(f"bounds must have length {k}, got {u.size} and {l.size}")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(c)) and np.all(np.isfinite(A))):
            raise DomainError("Q, c and A must be finite")
        if np.any(np.isnan(u)) or np.any(np.isnan(l)) or np.any(l > u):
            raise DomainError("bounds must satisfy l <= u")
        _check_psd(Q)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "l", l)

    @property
    def d(self) -> int:
        return int(self.c.size)

    @property
    def k(self) -> int:
        return int(self.A.shape[0])

    @property
    def is_diagonal(self) -> bool:
        return self.Q.ndim == 1

    def Q_matrix(self) -> np.ndarray:
        return np.diag(self.Q) if self.is_diagonal else self.Q

    def Q_dot(self, x: np.ndarray) -> np.ndarray:
        return self.Q * x if self.is_diagonal else self.Q @ x

    def objective(self, x: Any) -> float:
        xv = np.asarray(x, dtype=np.float64)
        return float(0.5 * xv @ self.Q_dot(xv) + self.c @ xv)


def _check_psd(Q: np.ndarray) -> None:
    if Q.ndim == 1:
        if Q.size and np.min(Q) < -1e-10:
            raise DomainError("Q must be positive semidefinite")
        return
    scale = max(1.0, float(np.max(np.abs(Q)))) if Q.size else 1.0
    if Q.size and float(np.max(np.abs(Q - Q.T))) > 1e-10 * scale:
        raise DomainError("Q must be symmetric")
    d = Q.shape[0]
    if d == 0:
        return
    directions = np.random.default_rng(0).standard_normal((d, 16))
    rayleigh = np.einsum("ij,ij->j", directions, Q @ directions) / np.einsum("ij,ij->j", directions, directions)
    if float(np.min(rayleigh)) < -1e-10:
        raise DomainError("Q must be positive semidefinite")


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: np.ndarray
    duals: np.ndarray
    primal_residual: float
    dual_residual: float
    iterations: int
    status: str
    polished: bool = False
    rho_updates: int = 0

    @property
    def solved(self) -> bool:
        return self.status == STATUS_SOLVED


@dataclass(frozen=True)
class QpSettings:
    rho0: float = 0.1
    sigma: float = 1e-6
    relaxation: float = 1.6
    check_every: int = 25
    rho_refactor_ratio: float = 5.0
    polish: bool = True
    polish_delta: float = 1e-9
    polish_refine_iter: int = 3
    # Active-set guesses must survive this many checks before a polish is tried.
    polish_stable_checks: int = 3
    polish_max_attempts: int = 5
    eps_infeasible: float = 1e-5
    # Constraint matrices at or below this density iterate in CSR form.
    sparse_density: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 < self.relaxation < 2.0:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.rho0 <= 0 or self.sigma <= 0 or self.check_every < 1:
            raise ValueError("rho0 and sigma must be positive, check_every >= 1")
        if self.polish_stable_checks < 1 or self.polish_max_attempts < 0:
            raise ValueError("polish_stable_checks must be >= 1 and polish_max_attempts >= 0")


def _signed_duals(prob: QpProblem, duals: np.ndarray) -> np.ndarray:
    y = np.where(np.isfinite(prob.u), duals, np.minimum(duals, 0.0))
    return np.where(np.isfinite(prob.l), y, np.maximum(y, 0.0))


def kkt_residual(prob: QpProblem, x: Any, duals: Any) -> Tuple[float, float]:
    """Max constraint violation and stationarity residual in the infinity norm.

    Multipliers with a sign that no finite bound supports are dropped before
    the stationarity residual is formed.
    """
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(duals, dtype=np.float64)
    if xv.shape != (prob.d,) or yv.shape != (prob.k,):
        raise DimensionError(f"x and duals must have lengths {prob.d} and {prob.k}")
    return _kkt(prob, prob.A, xv, yv)


def _kkt(prob: QpProblem, A: Any, x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    primal = 0.0
    if prob.k:
        Ax = A @ x
        violation = np.maximum(np.maximum(Ax - prob.u, prob.l - Ax), 0.0)
        primal = float(np.max(violation))
    stationarity = prob.Q_dot(x) + prob.c
    if prob.k:
        stationarity = stationarity + A.T @ _signed_duals(prob, y)
    dual = float(np.max(np.abs(stationarity))) if prob.d else 0.0
    return primal, dual


def _norm_inf(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


class AdmmSolver:
    """Single-threaded solver that owns its factorization and iterates."""

    def __init__(self, prob: QpProblem, settings: Optional[QpSettings] = None) -> None:
        self.prob = prob
        self.settings = settings or QpSettings()
        self._Q = prob.Q_matrix()
        density = np.count_nonzero(prob.A) / prob.A.size if prob.A.size else 1.0
        self.is_sparse = prob.A.size > 0 and density <= self.settings.sparse_density
        self._A = sparse.csr_matrix(prob.A) if self.is_sparse else prob.A
        gap = prob.u - prob.l
        self._equality = gap < _EQUALITY_GAP
        self.rho = np.where(self._equality, self.settings.rho0 * 1e3, self.settings.rho0)
        self.rho = np.clip(self.rho, _RHO_MIN, _RHO_MAX)
        self.rho_updates = 0
        self.polish_attempts = 0
        self._factor = self._factorize()

    def _factorize(self) -> Tuple[np.ndarray, bool]:
        A = self._A
        K = self._Q + self.settings.sigma * np.eye(self.prob.d)
        if self.prob.k:
            if self.is_sparse:
                K = K + (A.T @ (sparse.diags(self.rho) @ A)).toarray()
            else:
                K = K + A.T @ (self.rho[:, None] * A)
        return linalg.cho_factor(K, lower=True, check_finite=False)

    def _update_rho(self, x: np.ndarray, z: np.ndarray, y: np.ndarray, pri: float, dua: float) -> None:
        prob = self.prob
        Ax = self._A @ x
        pri_scale = max(_norm_inf(Ax), _norm_inf(z), 1e-10)
        dua_scale = max(_norm_inf(prob.Q_dot(x)), _norm_inf(self._A.T @ y), _norm_inf(prob.c), 1e-10)
        pri_n = pri / pri_scale
        dua_n = max(dua / dua_scale, 1e-12)
        ratio = float(np.sqrt(pri_n / dua_n))
        if not np.isfinite(ratio) or ratio <= 0:
            return
        proposal = np.clip(self.rho * ratio, _RHO_MIN, _RHO_MAX)
        change = proposal / self.rho
        limit = self.settings.rho_refactor_ratio
        if np.max(change) > limit or np.min(change) < 1.0 / limit:
            self.rho = proposal
            self._factor = self._factorize()
            self.rho_updates += 1
            logger.debug("rho rescaled by %.3g (update %d)", ratio, self.rho_updates)

    def _infeasible(self, delta_y: np.ndarray) -> bool:
        prob = self.prob
        scale = _norm_inf(delta_y)
        eps = self.settings.eps_infeasible
        if scale <= eps:
            return False
        v = delta_y / scale
        pos = v > 0
        neg = v < 0
        if np.any(pos & ~np.isfinite(prob.u)) or np.any(neg & ~np.isfinite(prob.l)):
            return False
        lhs = float(prob.u[pos] @ v[pos] + prob.l[neg] @ v[neg])
        if lhs >= -eps:
            return False
        return _norm_inf(self._A.T @ v) < eps

    def _polish(self, z: np.ndarray, y: np.ndarray, tol: float) -> Optional[Tuple[np.ndarray, np.ndarray, float, float]]:
        prob = self.prob
        low = np.flatnonzero(z - prob.l < -y)
        upp = np.flatnonzero(prob.u - z < y)
        rows = np.concatenate([low, upp])
        A_red = prob.A[rows]
        b_red = np.concatenate([prob.l[low], prob.u[upp]])
        d = prob.d
        r = rows.size
        delta = self.settings.polish_delta
        K = np.zeros((d + r, d + r))
        K[:d, :d] = self._Q
        K[:d, d:] = A_red.T
        K[d:, :d] = A_red
        K_reg = K.copy()
        K_reg[:d, :d] += delta * np.eye(d)
        K_reg[d:, d:] -= delta * np.eye(r)
        rhs = np.concatenate([-prob.c, b_red])
        try:
            lu = linalg.lu_factor(K_reg, check_finite=False)
            sol = linalg.lu_solve(lu, rhs, check_finite=False)
            for _ in range(self.settings.polish_refine_iter):
                sol = sol + linalg.lu_solve(lu, rhs - K @ sol, check_finite=False)
        except (linalg.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(sol)):
            return None
        x = sol[:d]
        y_full = np.zeros(prob.k)
        y_full[rows] = sol[d:]
        if r and _norm_inf(A_red @ x - b_red) > tol:
            return None
        pri, dua = kkt_residual(prob, x, y_full)
        if max(pri, dua) > tol:
            return None
        return x, y_full, pri, dua

    def solve(
        self,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
        x0: Optional[np.ndarray] = None,
        y0: Optional[np.ndarray] = None,
    ) -> QpSolution:
        if not tol > 0:
            raise DomainError(f"tol must be positive, got {tol}")
        if max_iter < 1:
            raise DomainError(f"max_iter must be >= 1, got {max_iter}")
        prob = self.prob
        st = self.settings
        A, c = self._A, prob.c
        if x0 is None:
            x = np.zeros(prob.d)
        else:
            x = np.asarray(x0, dtype=np.float64).copy()
            if x.shape != (prob.d,):
                raise DimensionError(f"warm start has length {x.size}, expected {prob.d}")
        z = np.clip(A @ x, prob.l, prob.u)
        if y0 is None:
            y = np.zeros(prob.k)
        else:
            y = np.asarray(y0, dtype=np.float64).copy()
            if y.shape != (prob.k,):
                raise DimensionError(f"dual warm start has length {y.size}, expected {prob.k}")
            if not np.all(np.isfinite(y)):
                y = np.zeros(prob.k)
        alpha = st.relaxation

        best: Optional[Tuple[float, np.ndarray, np.ndarray, float, float]] = None
        last_signature: Optional[bytes] = None
        stable_checks = 0
        status = STATUS_MAX_ITER
        iteration = 0
        delta_y = np.zeros(prob.k)

        for iteration in range(1, max_iter + 1):
            rhs = st.sigma * x - c
            if prob.k:
                rhs = rhs + A.T @ (self.rho * z - y)
            x_tilde = linalg.cho_solve(self._factor, rhs, check_finite=False)
            z_tilde = A @ x_tilde
            x = alpha * x_tilde + (1.0 - alpha) * x
            z_relaxed = alpha * z_tilde + (1.0 - alpha) * z
            z = np.clip(z_relaxed + y / self.rho, prob.l, prob.u)
            y_next = y + self.rho * (z_relaxed - z)
            delta_y = y_next - y
            y = y_next

            if iteration % st.check_every and iteration != max_iter:
                continue
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))) or _norm_inf(y) > _DUAL_BLOWUP:
                status = STATUS_INFEASIBLE
                break
            pri_admm = _norm_inf(A @ x - z) if prob.k else 0.0
            dua_admm = _norm_inf(prob.Q_dot(x) + c + A.T @ y) if prob.k else _norm_inf(prob.Q_dot(x) + c)
            pri, dua = _kkt(prob, A, x, y)
            score = max(pri, dua, pri_admm)
            if best is None or score < best[0]:
                best = (score, x.copy(), y.copy(), pri, dua)
            converged = max(pri_admm, dua_admm) <= tol and max(pri, dua) <= tol
            if st.polish:
                signature = np.packbits(np.concatenate([z - prob.l < -y, prob.u - z < y])).tobytes()
                stable_checks = stable_checks + 1 if signature == last_signature else 0
                last_signature = signature
                settled = stable_checks == st.polish_stable_checks and self.polish_attempts < st.polish_max_attempts
                if converged or settled or iteration == max_iter:
                    self.polish_attempts += 1
                    polished = self._polish(z, y, tol)
                    if polished is not None:
                        px, py, ppri, pdua = polished
                        return QpSolution(
                            x=px,
                            duals=py,
                            primal_residual=ppri,
                            dual_residual=pdua,
                            iterations=iteration,
                            status=STATUS_SOLVED,
                            polished=True,
                            rho_updates=self.rho_updates,
                        )
            if converged:
                status = STATUS_SOLVED
                break
            if prob.k and self._infeasible(delta_y):
                status = STATUS_INFEASIBLE
                break
            if prob.k:
                self._update_rho(x, z, y, pri_admm, dua_admm)

        if status == STATUS_SOLVED:
            pri, dua = kkt_residual(prob, x, y)
            return QpSolution(x, y, pri, dua, iteration, status, rho_updates=self.rho_updates)
        if status == STATUS_INFEASIBLE:
            logger.warning("qp: infeasibility suspected after %d iterations (d=%d, k=%d)", iteration, prob.d, prob.k)
        else:
            logger.warning("qp: max_iter=%d reached (d=%d, k=%d)", max_iter, prob.d, prob.k)
        if best is None:
            fallback = np.zeros(prob.d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
            if not np.all(np.isfinite(fallback)):
                fallback = np.zeros(prob.d)
            y0 = np.zeros(prob.k)
            pri, dua = kkt_residual(prob, fallback, y0)
            return QpSolution(fallback, y0, pri, dua, iteration, status, rho_updates=self.rho_updates)
        _, bx, by, pri, dua = best
        return QpSolution(bx, by, pri, dua, iteration, status, rho_updates=self.rho_updates)


def solve_qp(
    prob: QpProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    x0: Optional[np.ndarray] = None,
    y0: Optional[np.ndarray] = None,
    settings: Optional[QpSettings] = None,
) -> QpSolution:
    """Solve with an optional primal and dual warm start."""
    return AdmmSolver(prob, settings).solve(tol=tol, max_iter=max_iter, x0=x0, y0=y0)


def _bound_list(values: np.ndarray) -> list:
    return [float(v) if np.isfinite(v) else None for v in values]


def qp_to_dict(prob: QpProblem) -> Dict[str, Any]:
    """JSON form; infinite bounds are written as null."""
    return {
        "Q": prob.Q_matrix().tolist(),
        "c": prob.c.tolist(),
        "A": prob.A.tolist(),
        "l": _bound_list(prob.l),
        "u": _bound_list(prob.u),
    }


def qp_from_dict(payload: Dict[str, Any]) -> QpProblem:
    try:
        c = np.asarray(payload["c"], dtype=np.float64)
        A = np.asarray(payload["A"], dtype=np.float64).reshape(-1, c.size)
        l = np.array([-np.inf if v is None else float(v) for v in payload["l"]])
        u = np.array([np.inf if v is None else float(v) for v in payload["u"]])
        Q = np.asarray(payload["Q"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as err:
        raise LoadError(f"invalid qp document: {err}")
    return QpProblem(Q=Q, c=c, A=A, u=u, l=l)


def dump_qp(prob: QpProblem, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(qp_to_dict(prob)), encoding="utf-8")
    return target


def load_qp(path: Union[str, Path]) -> QpProblem:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise LoadError(f"cannot read qp {path}: {err}")
    return qp_from_dict(payload)
