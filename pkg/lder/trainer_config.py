from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Optional, Tuple, Union

TRAINERS: Tuple[str, ...] = ("sgd", "dca", "dccp")


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    epochs: int = 2000
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0
    init_scale: float = 1.0
    lr_decay: bool = False


@dataclass(frozen=True)
class DcaConfig:
    epsilon: float = 1e-6
    max_outer: int = 200
    qp_tol: float = 1e-6
    qp_max_iter: int = 20000
    seed: int = 0
    init_scale: float = 1.0


@dataclass(frozen=True)
class CcpConfig:
    t0: float = 1.0
    mu: float = 2.0
    t_max: float = 1e4
    max_outer: int = 100
    slack_tol: float = 1e-6
    converge_tol: float = 1e-5
    qp_tol: float = 1e-6
    qp_max_iter: int = 20000
    seed: int = 0
    init_scale: float = 1.0
    init: str = "dca"
    init_outer: int = 200
    restarts: int = 1


CCP_INITS: Tuple[str, ...] = ("random", "sgd", "dca")

TrainerConfig = Union[SgdConfig, DcaConfig, CcpConfig]

CONFIG_TYPES: Dict[str, type] = {"sgd": SgdConfig, "dca": DcaConfig, "dccp": CcpConfig}


@dataclass(frozen=True)
class TrainerField:
    flag: str
    trainer: str
    attr: str
    description: str
    value_type: str
    min_value: Optional[float] = None
    max_value: Optional[float] = None
    min_exclusive: bool = False
    max_exclusive: bool = False
    choices: Optional[Tuple[str, ...]] = None


def _f(flag: str, attr: str, description: str, value_type: str, **limits: Any) -> TrainerField:
    trainer = flag.split(".", 1)[0]
    return TrainerField(flag=flag, trainer=trainer, attr=attr, description=description, value_type=value_type, **limits)


TRAINER_FIELDS: Dict[str, TrainerField] = {
    f.flag: f
    for f in (
        _f("sgd.lr", "learning_rate", "Step size of each minibatch update.", "float", min_value=0.0),
        _f("sgd.epochs", "epochs", "Passes over the shuffled training set.", "int", min_value=1),
        _f("sgd.batch-size", "batch_size", "Minibatch size, clamped to the sample count.", "int", min_value=1),
        _f("sgd.momentum", "momentum", "Classical momentum coefficient.", "float", min_value=0.0, max_value=1.0, max_exclusive=True),
        _f("sgd.init-scale", "init_scale", "Scale of the normal initialization.", "float", min_value=0.0),
        _f("sgd.lr-decay", "lr_decay", "Divide the step size by sqrt(epoch).", "bool"),
        _f("dca.epsilon", "epsilon", "Relative MSE change that stops the outer loop.", "float", min_value=0.0, min_exclusive=True),
        _f("dca.max-outer", "max_outer", "Maximum outer iterations.", "int", min_value=1),
        _f("dca.qp-tol", "qp_tol", "Subproblem KKT tolerance.", "float", min_value=0.0, min_exclusive=True),
        _f("dca.qp-max-iter", "qp_max_iter", "Subproblem iteration cap.", "int", min_value=1),
        _f("dca.init-scale", "init_scale", "Scale of the normal initialization.", "float", min_value=0.0),
        _f("dccp.t0", "t0", "Initial slack penalty.", "float", min_value=0.0, min_exclusive=True),
        _f("dccp.mu", "mu", "Penalty growth factor.", "float", min_value=1.0, min_exclusive=True),
        _f("dccp.t-max", "t_max", "Penalty cap.", "float", min_value=0.0, min_exclusive=True),
        _f("dccp.max-outer", "max_outer", "Maximum outer iterations.", "int", min_value=1),
        _f("dccp.slack-tol", "slack_tol", "Total slack accepted at convergence.", "float", min_value=0.0, min_exclusive=True),
        _f("dccp.converge-tol", "converge_tol", "Relative objective change that stops the outer loop.", "float", min_value=0.0, min_exclusive=True),
        _f("dccp.qp-tol", "qp_tol", "Subproblem KKT tolerance.", "float", min_value=0.0, min_exclusive=True),
        _f("dccp.qp-max-iter", "qp_max_iter", "Subproblem iteration cap.", "int", min_value=1),
        _f("dccp.init-scale", "init_scale", "Scale of the normal initialization.", "float", min_value=0.0),
        _f("dccp.init", "init", "Starting point: random, sgd (default SGD run) or dca (DCA run).", "choice", choices=CCP_INITS),
        _f("dccp.init-outer", "init_outer", "DCA outer iterations spent on the dca starting point.", "int", min_value=1),
        _f("dccp.restarts", "restarts", "Independent starts with consecutive seeds; the best train MSE wins.", "int", min_value=1),
    )
}


def _normalize_value(field: TrainerField, raw: Any) -> Any:
    if field.value_type == "bool":
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, (int, float)):
            return raw != 0
        txt = str(raw).strip().lower()
        if txt in {"1", "true", "yes", "on"}:
            return True
        if txt in {"0", "false", "no", "off"}:
            return False
        raise ValueError(f"--{field.flag} expects bool")

    if field.value_type == "choice":
        txt = str(raw).strip().lower()
        if field.choices is not None and txt not in field.choices:
            raise ValueError(f"--{field.flag} must be one of {', '.join(field.choices)}")
        return txt

    if field.value_type == "int":
        try:
            value = int(raw)
        except Exception as err:
            raise ValueError(f"--{field.flag} expects int: {err}")
        _check_range(field, float(value))
        return value

    if field.value_type == "float":
        try:
            value = float(raw)
        except Exception as err:
            raise ValueError(f"--{field.flag} expects float: {err}")
        if value != value:
            raise ValueError(f"--{field.flag} must not be NaN")
        _check_range(field, value)
        return value

    return str(raw)


def _check_range(field: TrainerField, value: float) -> None:
    if field.min_value is not None:
        if field.min_exclusive and value <= field.min_value:
            raise ValueError(f"--{field.flag} must be > {field.min_value}")
        if value < field.min_value:
            raise ValueError(f"--{field.flag} must be >= {field.min_value}")
    if field.max_value is not None:
        if field.max_exclusive and value >= field.max_value:
            raise ValueError(f"--{field.flag} must be < {field.max_value}")
        if value > field.max_value:
            raise ValueError(f"--{field.flag} must be <= {field.max_value}")


def validate_config(trainer: str, cfg: TrainerConfig) -> TrainerConfig:
    """Run every registered field of ``trainer`` through the range checks."""
    for field in TRAINER_FIELDS.values():
        if field.trainer == trainer:
            _normalize_value(field, getattr(cfg, field.attr))
    if isinstance(cfg, CcpConfig) and cfg.t0 > cfg.t_max:
        raise ValueError("--dccp.t0 must be <= --dccp.t-max")
    return cfg


def build_config(trainer: str, overrides: Optional[Dict[str, Any]] = None, *, seed: Optional[int] = None) -> TrainerConfig:
    """Default config for ``trainer`` with flag-keyed overrides applied."""
    if trainer not in CONFIG_TYPES:
        raise ValueError(f"unknown trainer: {trainer}")
    values: Dict[str, Any] = {}
    for flag, raw in (overrides or {}).items():
        field = TRAINER_FIELDS.get(flag)
        if field is None:
            raise ValueError(f"unsupported trainer flag: --{flag}")
        if field.trainer != trainer:
            continue
        values[field.attr] = _normalize_value(field, raw)
    if seed is not None:
        values["seed"] = int(seed)
    cfg = CONFIG_TYPES[trainer](**values)
    return validate_config(trainer, cfg)


def with_seed(cfg: TrainerConfig, seed: int) -> TrainerConfig:
    return replace(cfg, seed=int(seed))


def config_to_dict(cfg: TrainerConfig) -> Dict[str, Any]:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def schema_items() -> list:
    out = []
    for flag, field in TRAINER_FIELDS.items():
        default = getattr(CONFIG_TYPES[field.trainer](), field.attr)
        out.append(
            {
                "flag": f"--{flag}",
                "trainer": field.trainer,
                "description": field.description,
                "value_type": field.value_type,
                "min_value": field.min_value,
                "max_value": field.max_value,
                "choices": list(field.choices) if field.choices else None,
                "default_value": default,
            }
        )
    return out
