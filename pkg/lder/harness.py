"""Cross-validation and trainer comparison.

Every (dataset, trainer) cell runs as an independent task; results are
reduced in dataset-major, trainer-minor order regardless of completion
order, so reports are identical across worker counts.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .datasets import (
    Dataset,
    dataset_from_training_set,
    impute_mean,
    kfold_split,
    load_csv,
    standardize as standardize_features,
    synth_pwl,
)
from .dca import train_dca
from .dccp import train_dccp
from .errors import DomainError, LderError, LoadError
from .loss import mape
from .models import LDerParams, ModelDims, TrainingSet, TrainReport
from .morph import predict_batch
from .reports import (
    BenchReport,
    ComparisonTable,
    CvResult,
    FoldScore,
    TableCell,
    TimingSummary,
    WilcoxonEntry,
    finite_or_none,
    versions,
    with_digest,
)
from .sgd import train_sgd
from .stats import MIN_PAIRS, wilcoxon_signed_rank
from .trainer_config import CONFIG_TYPES, TrainerConfig, config_to_dict, validate_config, with_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerSpec:
    """A comparison column: ``label`` must be unique, ``trainer`` need not be."""

    label: str
    trainer: str
    config: TrainerConfig


def train_model(
    trainer: str,
    T: TrainingSet,
    dims: ModelDims,
    cfg: TrainerConfig,
    *,
    init: Optional[LDerParams] = None,
    qp_dump_dir: Optional[Union[str, Path]] = None,
) -> Tuple[LDerParams, TrainReport]:
    if trainer not in CONFIG_TYPES:
        raise DomainError(f"unknown trainer: {trainer}")
    validate_config(trainer, cfg)
    if trainer == "sgd":
        return train_sgd(T, dims, cfg, init=init)
    if trainer == "dca":
        return train_dca(T, dims, cfg, init=init, qp_dump_dir=qp_dump_dir)
    return train_dccp(T, dims, cfg, init=init, qp_dump_dir=qp_dump_dir)


def _mean_std(values: List[float]) -> Tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    mean = finite_or_none(float(np.mean(arr)))
    std = finite_or_none(float(np.std(arr, ddof=1))) if arr.size >= 2 else None
    return mean, std


def _run_fold(
    T: TrainingSet,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    fold: int,
    trainer: str,
    cfg: TrainerConfig,
    dims: ModelDims,
    standardize: bool,
    qp_dump_dir: Optional[Path],
) -> FoldScore:
    train, test = T.subset(train_idx), T.subset(test_idx)
    score = FoldScore(fold=fold, n_train=train.m, n_test=test.m)
    started = time.perf_counter()
    try:
        if standardize:
            X_train, stats = standardize_features(train.X)
            X_test = stats.apply(test.X)
            train = TrainingSet(X=X_train, y=train.y)
        else:
            X_test = test.X
        params, report = train_model(trainer, train, dims, cfg, qp_dump_dir=qp_dump_dir)
        predictions = predict_batch(params, X_test)
        if not np.all(np.isfinite(predictions)):
            raise DomainError("non-finite test predictions")
    except (LderError, ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        score.wall_time = time.perf_counter() - started
        score.error = f"{type(err).__name__}: {err}"
        logger.warning("fold %d of %s failed: %s", fold, trainer, score.error)
        return score
    score.wall_time = time.perf_counter() - started
    residual = test.y - predictions
    score.mse = finite_or_none(float(np.mean(residual * residual)))
    score.mape = finite_or_none(mape(test.y, predictions))
    score.train_mse = finite_or_none(report.final_loss)
    score.termination = report.termination
    score.iterations = report.iterations
    score.loss_trace = [finite_or_none(v) for v in report.loss_trace]
    return score


def run_cv(
    dataset: Dataset,
    trainer: str,
    config: TrainerConfig,
    k: int,
    seed: int,
    *,
    r1: int = 10,
    r2: int = 10,
    standardize: bool = True,
    workers: int = 1,
    qp_dump_dir: Optional[Union[str, Path]] = None,
) -> CvResult:
    """k-fold scores on raw target units; fold f trains with seed ``config.seed + f``."""
    T = dataset.training_set()
    plan = kfold_split(T.m, k, seed)
    dims = ModelDims(n=T.n, r1=r1, r2=r2)
    validate_config(trainer, config)
    started = time.perf_counter()

    def task(fold: int) -> FoldScore:
        dump = Path(qp_dump_dir) / f"{dataset.name}_{trainer}_fold{fold}" if qp_dump_dir else None
        return _run_fold(
            T,
            plan.train_indices(fold),
            plan.test_indices(fold),
            fold,
            trainer,
            with_seed(config, config.seed + fold),
            dims,
            standardize,
            dump,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            folds = list(pool.map(task, range(plan.k)))
    else:
        folds = [task(f) for f in range(plan.k)]

    ok = [f for f in folds if not f.failed]
    failed = [f.fold for f in folds if f.failed]
    mse_mean, mse_std = _mean_std([f.mse for f in ok if f.mse is not None])
    mape_undefined = any(f.mape is None for f in ok)
    mape_mean, mape_std = (None, None) if mape_undefined else _mean_std([f.mape for f in ok])
    result = CvResult(
        dataset=dataset.name,
        trainer=trainer,
        k=plan.k,
        seed=seed,
        standardize=standardize,
        config=config_to_dict(config),
        folds=folds,
        mape_mean=mape_mean,
        mape_std=mape_std,
        mse_mean=mse_mean,
        mse_std=mse_std,
        mape_undefined=mape_undefined,
        partial=bool(failed),
        failed_folds=failed,
        wall_time_total=time.perf_counter() - started,
    )
    logger.info(
        "cv %s/%s: mape=%s mse=%s%s",
        dataset.name,
        trainer,
        "undefined" if mape_mean is None else f"{mape_mean:.6g}",
        "n/a" if mse_mean is None else f"{mse_mean:.6g}",
        f" (failed folds {failed})" if failed else "",
    )
    return result


def normalize_scores(means: Sequence[Optional[float]]) -> List[Optional[float]]:
    """Min-max normalization of one dataset row; best trainer maps to 0."""
    defined = [v for v in means if v is not None]
    if not defined:
        return [None for _ in means]
    lo, hi = min(defined), max(defined)
    if hi == lo:
        return [None if v is None else 0.0 for v in means]
    return [None if v is None else (v - lo) / (hi - lo) for v in means]


def _timing(label: str, results: List[CvResult]) -> TimingSummary:
    times = [t for r in results for t in r.fold_times]
    arr = np.asarray(times, dtype=np.float64) if times else np.zeros(1)
    return TimingSummary(
        trainer=label,
        total=float(arr.sum()),
        mean_fold=float(arr.mean()),
        median_fold=float(np.median(arr)),
        max_fold=float(arr.max()),
    )


def _pairwise_wilcoxon(labels: List[str], cells: List[List[TableCell]]) -> Tuple[List[WilcoxonEntry], Optional[str]]:
    if len(cells) < MIN_PAIRS:
        return [], f"needs at least {MIN_PAIRS} datasets, got {len(cells)}"
    entries = []
    for i, j in itertools.combinations(range(len(labels)), 2):
        pairs = [(row[i].mape_mean, row[j].mape_mean) for row in cells]
        pairs = [(a, b) for a, b in pairs if a is not None and b is not None]
        if len(pairs) < MIN_PAIRS:
            logger.info("wilcoxon %s vs %s skipped: %d usable datasets", labels[i], labels[j], len(pairs))
            continue
        a, b = zip(*pairs)
        res = wilcoxon_signed_rank(list(a), list(b))
        entries.append(
            WilcoxonEntry(
                trainer_a=labels[i],
                trainer_b=labels[j],
                datasets=len(pairs),
                statistic=res.statistic,
                p_value=res.p_value,
                n_used=res.n_used,
                method=res.method,
                degenerate=res.degenerate,
            )
        )
    return entries, None


def compare_trainers(
    datasets: Sequence[Dataset],
    trainers: Sequence[TrainerSpec],
    k: int,
    seed: int,
    *,
    r1: int = 10,
    r2: int = 10,
    standardize: bool = True,
    workers: int = 1,
    qp_dump_dir: Optional[Union[str, Path]] = None,
) -> Tuple[ComparisonTable, List[CvResult]]:
    if len(datasets) < 1:
        raise DomainError("compare_trainers needs at least one dataset")
    if len(trainers) < 2:
        raise DomainError("compare_trainers needs at least two trainers")
    labels = [t.label for t in trainers]
    if len(set(labels)) != len(labels):
        raise DomainError(f"trainer labels must be unique: {labels}")

    tasks = [(d, t) for d in datasets for t in trainers]

    def run(task: Tuple[Dataset, TrainerSpec]) -> CvResult:
        d, spec = task
        return run_cv(d, spec.trainer, spec.config, k, seed, r1=r1, r2=r2, standardize=standardize, qp_dump_dir=qp_dump_dir)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(task) for task in tasks]

    width = len(trainers)
    cells: List[List[TableCell]] = []
    normalized: List[List[Optional[float]]] = []
    for row_start in range(0, len(results), width):
        row = results[row_start : row_start + width]
        cells.append([TableCell(mape_mean=r.mape_mean, mape_std=r.mape_std, partial=r.partial) for r in row])
        normalized.append(normalize_scores([r.mape_mean for r in row]))

    wilcoxon, skipped = _pairwise_wilcoxon(labels, cells)
    timing = [_timing(label, results[j::width]) for j, label in enumerate(labels)]
    table = ComparisonTable(
        datasets=[d.name for d in datasets],
        trainers=labels,
        cells=cells,
        normalized=normalized,
        wilcoxon=wilcoxon,
        wilcoxon_skipped=skipped,
        timing=timing,
    )
    return table, results


def build_bench_report(
    table: ComparisonTable,
    results: List[CvResult],
    trainers: Sequence[TrainerSpec],
    settings: Dict[str, Any],
) -> BenchReport:
    report = BenchReport(
        versions=versions(),
        settings=dict(settings),
        configs={t.label: {"trainer": t.trainer, **config_to_dict(t.config)} for t in trainers},
        results=results,
        table=table,
    )
    return with_digest(report)


def _cell_value(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_table_csv(table: ComparisonTable, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset"] + [f"{label}_{part}" for label in table.trainers for part in ("mean", "std")])
        for name, row in zip(table.datasets, table.cells):
            writer.writerow([name] + [_cell_value(v) for cell in row for v in (cell.mape_mean, cell.mape_std)])
    return target


def read_table_csv(path: Union[str, Path]) -> Dict[str, Dict[str, Optional[float]]]:
    """``{dataset: {column: value}}``; empty cells read back as None."""
    out: Dict[str, Dict[str, Optional[float]]] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as f:
        for record in csv.DictReader(f):
            name = record.pop("dataset")
            out[name] = {k: (float(v) if v else None) for k, v in record.items()}
    return out


def write_normalized_csv(table: ComparisonTable, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset"] + table.trainers)
        for name, row in zip(table.datasets, table.normalized):
            writer.writerow([name] + [_cell_value(v) for v in row])
    return target


def write_timing_csv(table: ComparisonTable, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["trainer", "total", "mean_fold", "median_fold", "max_fold"])
        for t in table.timing:
            writer.writerow([t.trainer, repr(t.total), repr(t.mean_fold), repr(t.median_fold), repr(t.max_fold)])
    return target


def format_table(table: ComparisonTable) -> str:
    """Plain-text mean±std MAPE table; ``*`` marks cells with failed folds."""
    header = ["dataset"] + table.trainers
    rows = [[name] + [cell.label() for cell in row] for name, row in zip(table.datasets, table.cells)]
    widths = [max(len(str(r[j])) for r in [header] + rows) for j in range(len(header))]
    lines = ["  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip() for r in [header] + rows]
    return "\n".join(lines)


def write_bench_outputs(report: BenchReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    report_path = root / "report.json"
    report_path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return {
        "report": report_path,
        "table": write_table_csv(report.table, root / "table.csv"),
        "normalized": write_normalized_csv(report.table, root / "normalized.csv"),
        "timing": write_timing_csv(report.table, root / "timing.csv"),
    }


def prepare_dataset(path: Union[str, Path], target_column: Optional[str] = None, name: Optional[str] = None) -> Dataset:
    dataset = load_csv(path, target_column=target_column, name=name)
    if dataset.missing_count:
        logger.info("%s: imputing %d missing cells with column means", dataset.name, dataset.missing_count)
    return impute_mean(dataset)


def _synthetic_entry(name: str, spec: Dict[str, Any]) -> Dataset:
    dims = ModelDims(n=int(spec["n"]), r1=int(spec.get("r1", 2)), r2=int(spec.get("r2", 2)))
    T, _ = synth_pwl(
        dims,
        int(spec["m"]),
        float(spec.get("noise_std", 0.0)),
        int(spec.get("seed", 0)),
        offset=float(spec.get("offset", 0.0)),
    )
    return dataset_from_training_set(name, T)


def load_manifest(path: Union[str, Path]) -> List[Dataset]:
    """CSV entries ``{path, target_column, name}`` or ``{name, synthetic: {...}}``.

    Relative CSV paths resolve against the manifest's directory.
    """
    source = Path(path)
    try:
        payload = json.loads(source.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise LoadError(f"cannot read manifest {source}: {err}")
    entries = payload.get("datasets") if isinstance(payload, dict) else payload
    if not isinstance(entries, list) or not entries:
        raise LoadError(f"manifest {source} has no dataset entries")

    datasets = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise LoadError(f"manifest entry {i} is not an object")
        try:
            if "synthetic" in entry:
                datasets.append(_synthetic_entry(str(entry.get("name", f"synthetic_{i}")), entry["synthetic"]))
                continue
            csv_path = Path(entry["path"])
            if not csv_path.is_absolute():
                csv_path = source.parent / csv_path
            datasets.append(prepare_dataset(csv_path, entry.get("target_column"), entry.get("name")))
        except KeyError as err:
            raise LoadError(f"manifest entry {i} misses field {err}")
        except (TypeError, ValueError) as err:
            if isinstance(err, LderError):
                raise
            raise LoadError(f"manifest entry {i}: {err}")
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise LoadError(f"manifest dataset names must be unique: {names}")
    return datasets
