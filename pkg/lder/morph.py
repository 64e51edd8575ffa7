from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from .errors import DimensionError, LoadError
from .models import LDerParams, ModelDims


def _as_vector(values: Any, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


def dilation(a: Any, x: Any) -> float:
    av = _as_vector(a, "a")
    xv = _as_vector(x, "x")
    if av.shape != xv.shape or av.size == 0:
        raise DimensionError(f"dilation needs equal non-empty lengths, got {av.size} and {xv.size}")
    return float(np.max(av + xv))


def erosion(b: Any, x: Any) -> float:
    bv = _as_vector(b, "b")
    xv = _as_vector(x, "x")
    if bv.shape != xv.shape or bv.size == 0:
        raise DimensionError(f"erosion needs equal non-empty lengths, got {bv.size} and {xv.size}")
    return float(np.min(bv + xv))


def _affine(weights: np.ndarray, biases: np.ndarray, X: np.ndarray) -> np.ndarray:
    # Row-wise reduction keeps the scalar and batch paths bit-identical.
    return np.sum(X[:, None, :] * weights[None, :, :], axis=2) + biases[None, :]


def _check_batch(p: LDerParams, X: Any) -> np.ndarray:
    Xv = np.asarray(X, dtype=np.float64)
    if Xv.ndim != 2:
        raise DimensionError(f"X must be a matrix, got shape {Xv.shape}")
    n = p.W.shape[1]
    if Xv.shape[1] != n:
        raise DimensionError(f"X has {Xv.shape[1]} columns, model expects {n}")
    return Xv


def piece_values(p: LDerParams, X: Any) -> Tuple[np.ndarray, np.ndarray]:
    """Affine piece values of both branches: (m x r1, m x r2)."""
    Xv = _check_batch(p, X)
    return _affine(p.W, p.a, Xv), _affine(p.M, p.b, Xv)


def predict_batch(p: LDerParams, X: Any) -> np.ndarray:
    Xv = _check_batch(p, X)
    if Xv.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    first, second = _affine(p.W, p.a, Xv), _affine(p.M, p.b, Xv)
    return np.max(first, axis=1) - np.max(second, axis=1)


def predict(p: LDerParams, x: Any) -> float:
    xv = _as_vector(x, "x")
    return float(predict_batch(p, xv[None, :])[0])


def active_indices(p: LDerParams, x: Any) -> Tuple[int, int]:
    """Zero-based argmax of each branch at x; ties go to the lowest index."""
    xv = _as_vector(x, "x")
    first, second = piece_values(p, xv[None, :])
    return int(np.argmax(first[0])), int(np.argmax(second[0]))


def active_indices_batch(p: LDerParams, X: Any) -> Tuple[np.ndarray, np.ndarray]:
    first, second = piece_values(p, X)
    return np.argmax(first, axis=1), np.argmax(second, axis=1)


def flatten(p: LDerParams) -> np.ndarray:
    upper = np.hstack([p.W, p.a[:, None]])
    lower = np.hstack([p.M, p.b[:, None]])
    return np.concatenate([upper.ravel(), lower.ravel()])


def unflatten(alpha: Any, dims: ModelDims) -> LDerParams:
    vec = _as_vector(alpha, "alpha")
    if vec.size != dims.flat_length:
        raise DimensionError(f"alpha has length {vec.size}, expected {dims.flat_length}")
    blocks = vec.reshape(dims.blocks, dims.block_size)
    upper = blocks[: dims.r1]
    lower = blocks[dims.r1 :]
    return LDerParams(
        W=upper[:, :-1].copy(),
        a=upper[:, -1].copy(),
        M=lower[:, :-1].copy(),
        b=lower[:, -1].copy(),
    )


def model_to_dict(p: LDerParams) -> Dict[str, Any]:
    dims = p.dims
    return {
        "n": dims.n,
        "r1": dims.r1,
        "r2": dims.r2,
        "alpha": [float(v) for v in flatten(p)],
    }


def model_from_dict(payload: Dict[str, Any]) -> LDerParams:
    try:
        dims = ModelDims(n=int(payload["n"]), r1=int(payload["r1"]), r2=int(payload["r2"]))
        alpha = np.asarray(payload["alpha"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as err:
        raise LoadError(f"invalid model document: {err}")
    return unflatten(alpha, dims)


def save_model(p: LDerParams, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(model_to_dict(p), indent=2), encoding="utf-8")


def load_model(path: Union[str, Path]) -> LDerParams:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise LoadError(f"cannot read model {path}: {err}")
    return model_from_dict(payload)
