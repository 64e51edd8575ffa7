from __future__ import annotations

import hashlib
import json
import math
import platform
from typing import Any, Dict, List, Optional

import numpy as np
import scipy
from pydantic import BaseModel, Field

from . import __version__

REPORT_VERSION = 1

# Keys dropped before hashing; wall-clock values differ between identical runs.
TIMING_KEYS = frozenset({"wall_time", "wall_time_total", "timing", "digest"})


def finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


class FoldScore(BaseModel):
    fold: int
    n_train: int
    n_test: int
    mape: Optional[float] = None
    mse: Optional[float] = None
    train_mse: Optional[float] = None
    termination: Optional[str] = None
    iterations: int = 0
    loss_trace: List[Optional[float]] = Field(default_factory=list)
    wall_time: float = 0.0
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


class CvResult(BaseModel):
    """Scores of one trainer on one dataset; ``None`` marks an undefined MAPE or a failed fold."""

    dataset: str
    trainer: str
    k: int
    seed: int
    standardize: bool = True
    config: Dict[str, Any] = Field(default_factory=dict)
    folds: List[FoldScore] = Field(default_factory=list)
    mape_mean: Optional[float] = None
    mape_std: Optional[float] = None
    mse_mean: Optional[float] = None
    mse_std: Optional[float] = None
    mape_undefined: bool = False
    partial: bool = False
    failed_folds: List[int] = Field(default_factory=list)
    wall_time_total: float = 0.0

    @property
    def fold_times(self) -> List[float]:
        return [f.wall_time for f in self.folds]


class TableCell(BaseModel):
    mape_mean: Optional[float] = None
    mape_std: Optional[float] = None
    partial: bool = False

    def label(self) -> str:
        if self.mape_mean is None:
            text = "undefined"
        elif self.mape_std is None:
            text = f"{self.mape_mean:.4f}"
        else:
            text = f"{self.mape_mean:.4f}±{self.mape_std:.4f}"
        return f"{text}*" if self.partial else text


class TimingSummary(BaseModel):
    trainer: str
    total: float
    mean_fold: float
    median_fold: float
    max_fold: float


class WilcoxonEntry(BaseModel):
    trainer_a: str
    trainer_b: str
    datasets: int
    statistic: float
    p_value: float
    n_used: int
    method: str
    degenerate: bool = False


class ComparisonTable(BaseModel):
    datasets: List[str]
    trainers: List[str]
    cells: List[List[TableCell]]
    normalized: List[List[Optional[float]]]
    wilcoxon: List[WilcoxonEntry] = Field(default_factory=list)
    wilcoxon_skipped: Optional[str] = None
    timing: List[TimingSummary] = Field(default_factory=list)

    def cell(self, dataset: str, trainer: str) -> TableCell:
        return self.cells[self.datasets.index(dataset)][self.trainers.index(trainer)]

    def median_normalized(self, trainer: str) -> Optional[float]:
        j = self.trainers.index(trainer)
        values = [row[j] for row in self.normalized if row[j] is not None]
        return float(np.median(values)) if values else None


class BenchReport(BaseModel):
    report_version: int = REPORT_VERSION
    versions: Dict[str, str] = Field(default_factory=dict)
    settings: Dict[str, Any] = Field(default_factory=dict)
    configs: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    results: List[CvResult] = Field(default_factory=list)
    table: ComparisonTable
    digest: str = ""


class TrainRunReport(BaseModel):
    report_version: int = REPORT_VERSION
    versions: Dict[str, str] = Field(default_factory=dict)
    dataset: str
    trainer: str
    dims: Dict[str, int]
    config: Dict[str, Any]
    standardize: Optional[Dict[str, List[float]]] = None
    train_mse: Optional[float] = None
    train_mape: Optional[float] = None
    training: Dict[str, Any] = Field(default_factory=dict)
    model_path: Optional[str] = None


class EvalReport(BaseModel):
    report_version: int = REPORT_VERSION
    dataset: str
    model_path: str
    m: int
    mse: Optional[float] = None
    mape: Optional[float] = None
    stats_path: Optional[str] = None


def versions() -> Dict[str, str]:
    return {
        "lder": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _strip_timing(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _strip_timing(v) for k, v in value.items() if k not in TIMING_KEYS}
    if isinstance(value, list):
        return [_strip_timing(v) for v in value]
    return value


def canonical_json(report: BaseModel) -> str:
    payload = _strip_timing(report.model_dump(mode="json"))
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def report_digest(report: BaseModel) -> str:
    return hashlib.sha256(canonical_json(report).encode("utf-8")).hexdigest()


def with_digest(report: BenchReport) -> BenchReport:
    return report.model_copy(update={"digest": report_digest(report)})


def report_schema() -> Dict[str, Any]:
    return BenchReport.model_json_schema()
