from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from .errors import DimensionError, DomainError
from .models import LDerParams, ModelDims, TrainingSet
from .morph import active_indices, active_indices_batch, predict_batch

# MAPE is undefined when a target is exactly zero.
MAPE_UNDEFINED = math.inf


def mse(p: LDerParams, T: TrainingSet) -> float:
    if T.m == 0:
        raise DomainError("mse of an empty training set")
    residual = T.y - predict_batch(p, T.X)
    return float(np.mean(residual * residual))


def mape(y: Any, y_hat: Any) -> float:
    yv = np.asarray(y, dtype=np.float64)
    hv = np.asarray(y_hat, dtype=np.float64)
    if yv.shape != hv.shape or yv.ndim != 1:
        raise DimensionError(f"mape needs equal-length vectors, got {yv.shape} and {hv.shape}")
    if yv.size == 0:
        raise DomainError("mape of an empty vector")
    if np.any(yv == 0.0):
        return MAPE_UNDEFINED
    return float(np.mean(np.abs(yv - hv) / np.abs(yv)))


@dataclass(frozen=True, eq=False)
class SparseAlphaVec:
    """Sparse vector over the flat parameter layout."""

    indices: np.ndarray
    values: np.ndarray
    length: int

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise DimensionError("indices and values must be equal-length vectors")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.length or np.any(np.diff(idx) <= 0)):
            raise DimensionError("indices must be strictly increasing and in range")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def dense(self) -> np.ndarray:
        out = np.zeros(self.length, dtype=np.float64)
        out[self.indices] = self.values
        return out

    def dot(self, alpha: Any) -> float:
        vec = np.asarray(alpha, dtype=np.float64)
        if vec.shape != (self.length,):
            raise DimensionError(f"alpha has shape {vec.shape}, expected ({self.length},)")
        return float(np.dot(self.values, vec[self.indices]))

    def __sub__(self, other: "SparseAlphaVec") -> "SparseAlphaVec":
        if other.length != self.length:
            raise DimensionError("sparse vectors of different lengths")
        merged = np.union1d(self.indices, other.indices)
        values = np.zeros(merged.size, dtype=np.float64)
        values[np.searchsorted(merged, self.indices)] += self.values
        values[np.searchsorted(merged, other.indices)] -= other.values
        keep = values != 0.0
        return SparseAlphaVec(indices=merged[keep], values=values[keep], length=self.length)


def indicator_vector(x: Any, s: int, dims: ModelDims) -> SparseAlphaVec:
    """Block ``s`` (zero-based, dilation blocks first) holds (x, 1)."""
    xv = np.asarray(x, dtype=np.float64)
    if xv.shape != (dims.n,):
        raise DimensionError(f"x has shape {xv.shape}, expected ({dims.n},)")
    if not 0 <= s < dims.blocks:
        raise IndexError(f"block index {s} out of range 0..{dims.blocks - 1}")
    start = s * dims.block_size
    return SparseAlphaVec(
        indices=np.arange(start, start + dims.block_size),
        values=np.append(xv, 1.0),
        length=dims.flat_length,
    )


def active_difference_vector(p: LDerParams, x: Any, dims: Optional[ModelDims] = None) -> SparseAlphaVec:
    dims = dims or p.dims
    j1, j2 = active_indices(p, x)
    return indicator_vector(x, j1, dims) - indicator_vector(x, dims.r1 + j2, dims)


def grad_mse(p: LDerParams, batch: TrainingSet) -> np.ndarray:
    if batch.m == 0:
        raise DomainError("gradient of an empty batch")
    dims = p.dims
    residual = predict_batch(p, batch.X) - batch.y
    j1, j2 = active_indices_batch(p, batch.X)
    rows = np.hstack([batch.X, np.ones((batch.m, 1))]) * (2.0 * residual / batch.m)[:, None]
    grad = np.zeros((dims.blocks, dims.block_size), dtype=np.float64)
    np.add.at(grad, j1, rows)
    np.add.at(grad, dims.r1 + j2, -rows)
    return grad.ravel()


def finite_diff_grad(f: Callable[[np.ndarray], float], alpha: Any, h: float = 1e-6) -> np.ndarray:
    if not h > 0:
        raise DomainError(f"step must be positive, got {h}")
    base = np.asarray(alpha, dtype=np.float64)
    out = np.zeros_like(base)
    for k in range(base.size):
        step = np.zeros_like(base)
        step[k] = h
        out[k] = (f(base + step) - f(base - step)) / (2.0 * h)
    return out
