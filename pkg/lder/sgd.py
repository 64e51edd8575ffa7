from __future__ import annotations

import logging
import math
import time
from typing import Optional, Tuple

import numpy as np

from .errors import DimensionError, DomainError
from .loss import grad_mse, mse
from .models import (
    STREAM_INIT,
    STREAM_SHUFFLE,
    TERMINATION_DIVERGED,
    TERMINATION_EPOCHS_EXHAUSTED,
    LDerParams,
    ModelDims,
    TrainingSet,
    TrainReport,
    rng_stream,
)
from .morph import flatten, unflatten
from .trainer_config import SgdConfig

logger = logging.getLogger(__name__)


def init_params(dims: ModelDims, seed: int, init_scale: float) -> LDerParams:
    """I.i.d. normal entries with standard deviation init_scale / sqrt(n + 1)."""
    if init_scale < 0:
        raise DomainError(f"init_scale must be >= 0, got {init_scale}")
    rng = rng_stream(seed, STREAM_INIT)
    std = init_scale / math.sqrt(dims.n + 1)
    return unflatten(rng.normal(0.0, std, size=dims.flat_length), dims)


def _shuffle_rng(seed: int) -> np.random.Generator:
    return rng_stream(seed, STREAM_SHUFFLE)


def train_sgd(
    T: TrainingSet,
    dims: ModelDims,
    cfg: SgdConfig,
    *,
    init: Optional[LDerParams] = None,
) -> Tuple[LDerParams, TrainReport]:
    if T.n != dims.n:
        raise DimensionError(f"training set has {T.n} features, model expects {dims.n}")
    started = time.perf_counter()
    params = init if init is not None else init_params(dims, cfg.seed, cfg.init_scale)
    alpha = flatten(params)
    velocity = np.zeros_like(alpha)
    rng = _shuffle_rng(cfg.seed)
    batch_size = min(cfg.batch_size, T.m)

    report = TrainReport(termination=TERMINATION_EPOCHS_EXHAUSTED, initial_loss=mse(params, T))
    report.diagnostics["batch_size"] = batch_size
    learning_rates = []
    last_good = alpha.copy()

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate / math.sqrt(epoch) if cfg.lr_decay else cfg.learning_rate
        learning_rates.append(lr)
        order = rng.permutation(T.m)
        finite = True
        for start in range(0, T.m, batch_size):
            batch = T.subset(order[start : start + batch_size])
            g = grad_mse(unflatten(alpha, dims), batch)
            velocity = cfg.momentum * velocity - lr * g
            alpha = alpha + velocity
            if not np.all(np.isfinite(alpha)):
                finite = False
                break
        loss = mse(unflatten(alpha, dims), T) if finite else math.inf
        report.iterations = epoch
        if not math.isfinite(loss):
            report.termination = TERMINATION_DIVERGED
            alpha = last_good
            logger.info("sgd: diverged at epoch %d", epoch)
            break
        report.loss_trace.append(loss)
        last_good = alpha.copy()
        if epoch % 100 == 0:
            logger.debug("sgd: epoch %d mse=%.6g lr=%.3g", epoch, loss, lr)

    report.diagnostics["learning_rates"] = learning_rates
    report.wall_time = time.perf_counter() - started
    if report.termination != TERMINATION_DIVERGED:
        logger.info("sgd: %d epochs, final mse=%.6g", report.iterations, report.final_loss)
    return unflatten(alpha, dims), report
