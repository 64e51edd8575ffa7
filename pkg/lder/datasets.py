from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, DomainError, ImputationError, LoadError
from .models import STREAM_DATA, STREAM_TRUTH, LDerParams, ModelDims, TrainingSet, rng_stream
from .morph import predict_batch, unflatten

STD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features may hold NaN for missing cells until ``impute_mean`` runs."""

    name: str
    X: np.ndarray
    y: np.ndarray
    feature_names: Tuple[str, ...]
    target_name: str = "y"

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DimensionError(f"X {X.shape} and y {y.shape} do not describe the same samples")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DomainError("dataset needs at least one sample and one feature")
        if len(self.feature_names) != X.shape[1]:
            raise DimensionError(f"{len(self.feature_names)} feature names for {X.shape[1]} columns")
        if not np.all(np.isfinite(y)):
            raise DomainError("targets must be finite")
        if np.any(np.isinf(X)):
            raise DomainError("features must be finite or missing")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def m(self) -> int:
        return int(self.X.shape[0])

    @property
    def n(self) -> int:
        return int(self.X.shape[1])

    @property
    def missing_count(self) -> int:
        return int(np.isnan(self.X).sum())

    def training_set(self) -> TrainingSet:
        if self.missing_count:
            raise DomainError(f"dataset {self.name} still has {self.missing_count} missing cells")
        return TrainingSet(X=self.X, y=self.y)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "feature_names": list(self.feature_names),
            "target_name": self.target_name,
            "X": [[None if math.isnan(v) else float(v) for v in row] for row in self.X],
            "y": [float(v) for v in self.y],
        }


def dataset_from_dict(payload: Dict[str, Any]) -> Dataset:
    try:
        X = np.array([[np.nan if v is None else float(v) for v in row] for row in payload["X"]], dtype=np.float64)
        return Dataset(
            name=str(payload["name"]),
            X=X,
            y=np.asarray(payload["y"], dtype=np.float64),
            feature_names=tuple(payload["feature_names"]),
            target_name=str(payload.get("target_name", "y")),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise LoadError(f"invalid dataset document: {err}")


def load_csv(path: Union[str, Path], target_column: Optional[str] = None, name: Optional[str] = None) -> Dataset:
    """Header row required; empty cells are missing; target defaults to the last column."""
    source = Path(path)
    try:
        with source.open("r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None:
                raise LoadError("missing header row", row=1)
            header = [h.strip() for h in header]
            target = target_column if target_column is not None else header[-1]
            if target not in header:
                raise LoadError(f"target column {target!r} not found", row=1, column=target)
            target_idx = header.index(target)
            rows: List[List[float]] = []
            for record in reader:
                if not record or all(not cell.strip() for cell in record):
                    continue
                line = reader.line_num
                if len(record) != len(header):
                    raise LoadError(f"expected {len(header)} fields, got {len(record)}", row=line)
                values = []
                for column, cell in zip(header, record):
                    cell = cell.strip()
                    if not cell:
                        if column == target:
                            raise LoadError("missing target value", row=line, column=column)
                        values.append(math.nan)
                        continue
                    try:
                        value = float(cell)
                    except ValueError:
                        raise LoadError(f"non-numeric cell {cell!r}", row=line, column=column)
                    if not math.isfinite(value):
                        raise LoadError(f"non-finite cell {cell!r}", row=line, column=column)
                    values.append(value)
                rows.append(values)
    except OSError as err:
        raise LoadError(f"cannot read {source}: {err}")
    except UnicodeDecodeError as err:
        raise LoadError(f"{source} is not UTF-8: {err}")
    except csv.Error as err:
        raise LoadError(f"malformed CSV: {err}")

    if not rows:
        raise LoadError("no data rows", row=1)
    if len(header) < 2:
        raise LoadError("need at least one feature column besides the target", row=1)
    data = np.array(rows, dtype=np.float64)
    return Dataset(
        name=name or source.stem,
        X=np.delete(data, target_idx, axis=1),
        y=data[:, target_idx],
        feature_names=tuple(h for j, h in enumerate(header) if j != target_idx),
        target_name=target,
    )


def write_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(list(dataset.feature_names) + [dataset.target_name])
        for row, y in zip(dataset.X, dataset.y):
            writer.writerow(["" if math.isnan(v) else repr(float(v)) for v in row] + [repr(float(y))])
    return target


def impute_mean(d: Dataset) -> Dataset:
    X = d.X.copy()
    for j, column in enumerate(d.feature_names):
        mask = np.isnan(X[:, j])
        if not mask.any():
            continue
        if mask.all():
            raise ImputationError(column)
        X[mask, j] = float(np.mean(X[~mask, j]))
    return Dataset(name=d.name, X=X, y=d.y, feature_names=d.feature_names, target_name=d.target_name)


@dataclass(frozen=True, eq=False)
class StandardizeStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: Any) -> np.ndarray:
        return apply_standardize(self, X)

    def inverse(self, Xs: Any) -> np.ndarray:
        return np.asarray(Xs, dtype=np.float64) * self.std + self.mean

    def as_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def standardize_stats_from_dict(payload: Dict[str, Any]) -> StandardizeStats:
    try:
        mean = np.asarray(payload["mean"], dtype=np.float64)
        std = np.asarray(payload["std"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as err:
        raise LoadError(f"invalid standardization document: {err}")
    if mean.ndim != 1 or mean.shape != std.shape:
        raise LoadError("standardization mean and std must be equal-length vectors")
    return StandardizeStats(mean=mean, std=np.maximum(std, STD_FLOOR))


def standardize(X: Any) -> Tuple[np.ndarray, StandardizeStats]:
    Xv = np.asarray(X, dtype=np.float64)
    if Xv.ndim != 2 or Xv.shape[0] < 1:
        raise DimensionError(f"standardize needs a non-empty matrix, got shape {Xv.shape}")
    mean = Xv.mean(axis=0)
    constant = np.ptp(Xv, axis=0) == 0.0
    # Constant columns map to exact zeros.
    mean[constant] = Xv[0, constant]
    std = np.maximum(Xv.std(axis=0), STD_FLOOR)
    stats = StandardizeStats(mean=mean, std=std)
    return apply_standardize(stats, Xv), stats


def apply_standardize(stats: StandardizeStats, X: Any) -> np.ndarray:
    Xv = np.asarray(X, dtype=np.float64)
    if Xv.ndim != 2 or Xv.shape[1] != stats.mean.size:
        raise DimensionError(f"X has shape {Xv.shape}, stats cover {stats.mean.size} features")
    return (Xv - stats.mean) / stats.std


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> List[int]:
        return [int(np.sum(self.assignments == f)) for f in range(self.k)]

    def as_dict(self) -> Dict[str, Any]:
        return {"k": self.k, "seed": self.seed, "assignments": [int(a) for a in self.assignments]}


def kfold_split(m: int, k: int, seed: int) -> FoldPlan:
    """Shuffled, unstratified k-fold partition; fold sizes differ by at most one."""
    if not 2 <= k <= m:
        raise DomainError(f"fold count must satisfy 2 <= k <= m, got k={k}, m={m}")
    order = np.random.default_rng(seed).permutation(m)
    assignments = np.empty(m, dtype=np.int64)
    for fold, part in enumerate(np.array_split(order, k)):
        assignments[part] = fold
    return FoldPlan(k=k, assignments=assignments, seed=int(seed))


def synth_pwl(
    dims: ModelDims,
    m: int,
    noise_std: float,
    seed: int,
    offset: float = 0.0,
) -> Tuple[TrainingSet, LDerParams]:
    """Targets of a random ground-truth model on X ~ U[-1, 1]^n plus Gaussian noise.

    ``offset`` is added to every dilation bias, which shifts every target by
    the same amount.
    """
    if m < 1:
        raise DomainError(f"m must be >= 1, got {m}")
    if noise_std < 0:
        raise DomainError(f"noise_std must be >= 0, got {noise_std}")
    truth_rng = rng_stream(seed, STREAM_TRUTH)
    alpha = truth_rng.normal(0.0, 1.0 / math.sqrt(dims.n + 1), size=dims.flat_length)
    truth = unflatten(alpha, dims)
    if offset:
        truth = LDerParams(W=truth.W, a=truth.a + offset, M=truth.M, b=truth.b)
    data_rng = rng_stream(seed, STREAM_DATA)
    X = data_rng.uniform(-1.0, 1.0, size=(m, dims.n))
    y = predict_batch(truth, X)
    if noise_std > 0:
        y = y + data_rng.normal(0.0, noise_std, size=m)
    return TrainingSet(X=X, y=y), truth


def dataset_from_training_set(name: str, T: TrainingSet, feature_names: Optional[Sequence[str]] = None) -> Dataset:
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j + 1}" for j in range(T.n))
    return Dataset(name=name, X=T.X, y=T.y, feature_names=names)
