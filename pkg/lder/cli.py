from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .config import Settings
from .datasets import StandardizeStats, standardize, standardize_stats_from_dict
from .errors import DimensionError, LderError
from .harness import (
    TrainerSpec,
    build_bench_report,
    compare_trainers,
    format_table,
    load_manifest,
    prepare_dataset,
    run_cv,
    train_model,
    write_bench_outputs,
)
from .loss import mape, mse
from .models import ModelDims, TrainingSet
from .morph import load_model, predict_batch, save_model
from .reports import EvalReport, TrainRunReport, finite_or_none, report_schema, versions
from .selftest import run_selftest
from .trainer_config import CONFIG_TYPES, TRAINER_FIELDS, TRAINERS, TrainerConfig, build_config, config_to_dict

logger = logging.getLogger(__name__)

EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(LderError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="[%(name)s] %(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _emit_error(kind: str, detail: str) -> None:
    print(json.dumps({"error": kind, "detail": detail}), file=sys.stderr)


def _emit(payload: Any) -> None:
    print(json.dumps(payload, indent=2, ensure_ascii=False))


def _positive_int(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {raw!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _flag_dest(flag: str) -> str:
    return "trainer__" + flag.replace(".", "__").replace("-", "_")


def _add_trainer_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("trainer options")
    for flag, field in TRAINER_FIELDS.items():
        default = getattr(CONFIG_TYPES[field.trainer](), field.attr)
        group.add_argument(f"--{flag}", dest=_flag_dest(flag), default=None, help=f"{field.description} (default {default})")


def _trainer_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {flag: getattr(args, _flag_dest(flag)) for flag in TRAINER_FIELDS if getattr(args, _flag_dest(flag), None) is not None}


def _trainer_config(args: argparse.Namespace, settings: Settings, trainer: str) -> TrainerConfig:
    overrides: Dict[str, Any] = {}
    if trainer in ("dca", "dccp"):
        overrides[f"{trainer}.qp-tol"] = settings.qp_tol
        overrides[f"{trainer}.qp-max-iter"] = settings.qp_max_iter
    overrides.update(_trainer_overrides(args))
    return build_config(trainer, overrides, seed=args.seed)


def _qp_dump_dir(args: argparse.Namespace, settings: Settings) -> Optional[str]:
    return args.qp_dump_dir or settings.qp_dump_dir or None


def _build_parser(settings: Settings) -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=settings.seed)
    common.add_argument("--r1", type=_positive_int, default=settings.r1)
    common.add_argument("--r2", type=_positive_int, default=settings.r2)
    common.add_argument("--out", default=settings.out_dir, help="output directory")
    common.add_argument("--log-level", default=settings.log_level, choices=["debug", "info", "warning", "error"])
    common.add_argument("--qp-dump-dir", default="", help="write every QP subproblem as JSON here")
    common.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=settings.standardize)

    data = _Parser(add_help=False)
    data.add_argument("--data", required=True, help="CSV dataset with a header row")
    data.add_argument("--target", default=None, help="target column (default: last)")

    parser = _Parser(prog="lder", description="Linear dilation-erosion regression toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, data], help="fit one trainer on one dataset")
    p.add_argument("--trainer", choices=TRAINERS, required=True)
    _add_trainer_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common, data], help="score a saved model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--stats", default=None, help="standardization JSON written by train (default: standardize.json next to --model)")
    p.add_argument("--raw-features", action="store_true", help="score on unstandardized features even if stats exist")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("cv", parents=[common, data], help="k-fold cross-validation of one trainer")
    p.add_argument("--trainer", choices=TRAINERS, required=True)
    p.add_argument("--folds", type=int, default=settings.folds)
    p.add_argument("--workers", type=_positive_int, default=settings.workers)
    _add_trainer_flags(p)
    p.set_defaults(handler=cmd_cv)

    p = sub.add_parser("bench", parents=[common], help="compare trainers over a dataset manifest")
    p.add_argument("--manifest", default=None)
    p.add_argument("--trainers", default=",".join(TRAINERS), help="comma-separated trainer list")
    p.add_argument("--folds", type=int, default=settings.folds)
    p.add_argument("--workers", type=_positive_int, default=settings.workers)
    p.add_argument("--schema", action="store_true", help="print the report JSON schema and exit")
    _add_trainer_flags(p)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.add_argument("--seed", type=int, default=settings.seed)
    p.add_argument("--full", action="store_true", help="also run the minutes-long representability check")
    p.add_argument("--log-level", default=settings.log_level, choices=["debug", "info", "warning", "error"])
    p.set_defaults(handler=cmd_selftest)
    return parser


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    dataset = prepare_dataset(args.data, args.target)
    T = dataset.training_set()
    stats: Optional[StandardizeStats] = None
    if args.standardize:
        X, stats = standardize(T.X)
        T = TrainingSet(X=X, y=T.y)
    dims = ModelDims(n=T.n, r1=args.r1, r2=args.r2)
    cfg = _trainer_config(args, settings, args.trainer)
    params, report = train_model(args.trainer, T, dims, cfg, qp_dump_dir=_qp_dump_dir(args, settings))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.json"
    save_model(params, model_path)
    if stats is not None:
        (out / "standardize.json").write_text(json.dumps(stats.as_dict(), indent=2) + "\n", encoding="utf-8")
    run = TrainRunReport(
        versions=versions(),
        dataset=dataset.name,
        trainer=args.trainer,
        dims={"n": dims.n, "r1": dims.r1, "r2": dims.r2},
        config=config_to_dict(cfg),
        standardize=stats.as_dict() if stats is not None else None,
        train_mse=finite_or_none(mse(params, T)),
        train_mape=finite_or_none(mape(T.y, predict_batch(params, T.X))),
        training=report.as_dict(),
        model_path=str(model_path),
    )
    (out / "train_report.json").write_text(run.model_dump_json(indent=2) + "\n", encoding="utf-8")
    _emit(
        {
            "dataset": dataset.name,
            "trainer": args.trainer,
            "termination": report.termination,
            "iterations": report.iterations,
            "train_mse": run.train_mse,
            "train_mape": run.train_mape,
            "model": str(model_path),
        }
    )
    return 0


def _eval_stats_path(args: argparse.Namespace) -> Optional[Path]:
    if args.raw_features:
        return None
    if args.stats:
        return Path(args.stats)
    sibling = Path(args.model).parent / "standardize.json"
    if sibling.exists():
        logger.info("eval: using %s", sibling)
        return sibling
    logger.warning("eval: no standardization stats next to %s, scoring raw features", args.model)
    return None


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    dataset = prepare_dataset(args.data, args.target)
    params = load_model(args.model)
    if params.dims.n != dataset.n:
        raise DimensionError(f"model expects {params.dims.n} features, dataset has {dataset.n}")
    X = dataset.X
    stats_path = _eval_stats_path(args)
    if stats_path is not None:
        stats = standardize_stats_from_dict(json.loads(stats_path.read_text(encoding="utf-8")))
        X = stats.apply(X)
    predictions = predict_batch(params, X)
    residual = dataset.y - predictions
    report = EvalReport(
        dataset=dataset.name,
        model_path=str(args.model),
        m=dataset.m,
        mse=finite_or_none(float((residual * residual).mean())),
        mape=finite_or_none(mape(dataset.y, predictions)),
        stats_path=None if stats_path is None else str(stats_path),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.json").write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    _emit(report.model_dump(mode="json"))
    return 0


def cmd_cv(args: argparse.Namespace, settings: Settings) -> int:
    dataset = prepare_dataset(args.data, args.target)
    cfg = _trainer_config(args, settings, args.trainer)
    result = run_cv(
        dataset,
        args.trainer,
        cfg,
        args.folds,
        args.seed,
        r1=args.r1,
        r2=args.r2,
        standardize=args.standardize,
        workers=max(1, args.workers),
        qp_dump_dir=_qp_dump_dir(args, settings),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"cv_{dataset.name}_{args.trainer}.json"
    path.write_text(result.model_dump_json(indent=2) + "\n", encoding="utf-8")
    _emit(
        {
            "dataset": result.dataset,
            "trainer": result.trainer,
            "k": result.k,
            "mape_mean": result.mape_mean,
            "mape_std": result.mape_std,
            "mse_mean": result.mse_mean,
            "mse_std": result.mse_std,
            "mape_undefined": result.mape_undefined,
            "partial": result.partial,
            "report": str(path),
        }
    )
    return 0


def _parse_trainer_list(raw: str) -> List[str]:
    names = [part.strip() for part in raw.split(",") if part.strip()]
    for name in names:
        if name not in TRAINERS:
            raise UsageError(f"unknown trainer: {name}")
    if len(names) < 2:
        raise UsageError("bench needs at least two trainers")
    return names


def cmd_bench(args: argparse.Namespace, settings: Settings) -> int:
    if args.schema:
        _emit(report_schema())
        return 0
    if not args.manifest:
        raise UsageError("bench needs --manifest (or --schema)")
    names = _parse_trainer_list(args.trainers)
    specs = [TrainerSpec(label=name, trainer=name, config=_trainer_config(args, settings, name)) for name in names]
    datasets = load_manifest(args.manifest)
    table, results = compare_trainers(
        datasets,
        specs,
        args.folds,
        args.seed,
        r1=args.r1,
        r2=args.r2,
        standardize=args.standardize,
        workers=max(1, args.workers),
        qp_dump_dir=_qp_dump_dir(args, settings),
    )
    report = build_bench_report(
        table,
        results,
        specs,
        {
            "k": args.folds,
            "seed": args.seed,
            "r1": args.r1,
            "r2": args.r2,
            "standardize": args.standardize,
            "manifest": Path(args.manifest).name,
        },
    )
    outputs = write_bench_outputs(report, args.out)
    print(format_table(table))
    for entry in table.wilcoxon:
        print(f"wilcoxon {entry.trainer_a} vs {entry.trainer_b}: W={entry.statistic:g} p={entry.p_value:.4g} ({entry.method}, n={entry.n_used})")
    if table.wilcoxon_skipped:
        print(f"wilcoxon skipped: {table.wilcoxon_skipped}")
    print(f"digest={report.digest} report={outputs['report']}")
    return 0


def cmd_selftest(args: argparse.Namespace, settings: Settings) -> int:
    results = run_selftest(args.seed, full=args.full)
    _emit([r.as_dict() for r in results])
    return 0 if all(r.passed for r in results) else EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        settings = Settings.from_env()
    except ValueError as err:
        _emit_error("config", str(err))
        return EXIT_USAGE
    parser = _build_parser(settings)
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        _emit_error(err.kind, str(err))
        return EXIT_USAGE
    _configure_logging(args.log_level)
    try:
        return args.handler(args, settings)
    except UsageError as err:
        _emit_error(err.kind, str(err))
        return EXIT_USAGE
    except LderError as err:
        _emit_error(err.kind, str(err))
        return EXIT_RUNTIME
    except ValueError as err:
        _emit_error("config", str(err))
        return EXIT_USAGE
    except OSError as err:
        _emit_error("io", str(err))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
