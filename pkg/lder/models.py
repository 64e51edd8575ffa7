from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np

from .errors import DimensionError, DomainError

TERMINATION_EPOCHS_EXHAUSTED = "epochs-exhausted"
TERMINATION_CONVERGED = "converged"
TERMINATION_MAX_ITER = "max_iter"
TERMINATION_SUBPROBLEM_FAILURE = "subproblem-failure"
TERMINATION_DIVERGED = "diverged"

STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_TRUTH = 3
STREAM_DATA = 4


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Generator for one consumer of ``seed``; distinct streams never overlap."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


@dataclass(frozen=True)
class ModelDims:
    n: int
    r1: int
    r2: int

    def __post_init__(self) -> None:
        for name in ("n", "r1", "r2"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DimensionError(f"{name} must be a positive integer, got {value}")

    @property
    def block_size(self) -> int:
        return self.n + 1

    @property
    def blocks(self) -> int:
        return self.r1 + self.r2

    @property
    def flat_length(self) -> int:
        return (self.r1 + self.r2) * (self.n + 1)


@dataclass(frozen=True, eq=False)
class LDerParams:
    """Weights and biases of both max-affine branches.

    W and a hold the r1 dilation pieces, M and b the r2 pieces of the
    subtracted branch. Arrays are float64 and never mutated in place.
    """

    W: np.ndarray
    a: np.ndarray
    M: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        W = np.asarray(self.W, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        M = np.asarray(self.M, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if W.ndim != 2 or M.ndim != 2 or a.ndim != 1 or b.ndim != 1:
            raise DimensionError("W, M must be matrices and a, b vectors")
        if W.shape[0] != a.shape[0]:
            raise DimensionError(f"W has {W.shape[0]} rows but a has {a.shape[0]} entries")
        if M.shape[0] != b.shape[0]:
            raise DimensionError(f"M has {M.shape[0]} rows but b has {b.shape[0]} entries")
        if W.shape[1] != M.shape[1]:
            raise DimensionError(f"W has {W.shape[1]} columns but M has {M.shape[1]}")
        ModelDims(n=W.shape[1], r1=W.shape[0], r2=M.shape[0])
        for arr in (W, a, M, b):
            if not np.all(np.isfinite(arr)):
                raise DomainError("parameters must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "b", b)

    @property
    def dims(self) -> ModelDims:
        return ModelDims(n=self.W.shape[1], r1=self.W.shape[0], r2=self.M.shape[0])


@dataclass(frozen=True, eq=False)
class TrainingSet:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1:
            raise DimensionError("X must be a matrix and y a vector")
        if X.shape[0] != y.shape[0]:
            raise DimensionError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if X.shape[0] < 1:
            raise DomainError("training set is empty")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DomainError("training set contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return int(self.X.shape[0])

    @property
    def n(self) -> int:
        return int(self.X.shape[1])

    def subset(self, indices: np.ndarray) -> "TrainingSet":
        idx = np.asarray(indices, dtype=np.int64)
        return TrainingSet(X=self.X[idx], y=self.y[idx])


@dataclass
class TrainReport:
    loss_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    wall_time: float = 0.0
    termination: str = TERMINATION_MAX_ITER
    initial_loss: float = float("nan")
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        if self.loss_trace:
            return self.loss_trace[-1]
        return self.initial_loss

    def as_dict(self) -> Dict[str, Any]:
        return {
            "loss_trace": [float(x) for x in self.loss_trace],
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "termination": self.termination,
            "initial_loss": float(self.initial_loss),
            "diagnostics": self.diagnostics,
        }
