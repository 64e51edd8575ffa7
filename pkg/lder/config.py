from __future__ import annotations

import os
from dataclasses import dataclass


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in {"1", "true", "yes", "on"}


def _load_env_file_if_present() -> None:
    env_file = os.getenv("LDER_ENV_FILE", ".env")
    if not os.path.exists(env_file):
        return

    with open(env_file, "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, value = line.split("=", 1)
            key = key.strip()
            value = value.strip().strip("\"").strip("'")
            if key and key not in os.environ:
                os.environ[key] = value


@dataclass(frozen=True)
class Settings:
    seed: int
    folds: int
    r1: int
    r2: int
    out_dir: str
    log_level: str
    qp_tol: float
    qp_max_iter: int
    workers: int
    standardize: bool
    qp_dump_dir: str

    @staticmethod
    def from_env() -> "Settings":
        _load_env_file_if_present()
        return Settings(
            seed=int(os.getenv("LDER_SEED", "0")),
            folds=int(os.getenv("LDER_FOLDS", "5")),
            r1=int(os.getenv("LDER_R1", "10")),
            r2=int(os.getenv("LDER_R2", "10")),
            out_dir=os.getenv("LDER_OUT_DIR", "reports"),
            log_level=os.getenv("LDER_LOG_LEVEL", "info").strip().lower(),
            qp_tol=float(os.getenv("LDER_QP_TOL", "1e-6")),
            qp_max_iter=int(os.getenv("LDER_QP_MAX_ITER", "20000")),
            workers=max(1, int(os.getenv("LDER_WORKERS", "1"))),
            standardize=_env_bool("LDER_STANDARDIZE", True),
            qp_dump_dir=os.getenv("LDER_QP_DUMP_DIR", "").strip(),
        )
