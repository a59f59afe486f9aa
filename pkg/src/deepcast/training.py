"""Gradient-descent loop shared by every model family."""
from __future__ import annotations

import logging
import math

import numpy as np

from .errors import ConfigError, DivergedError, NumericError
from .models import Forecaster
from .optim import Optimizer, OptimizerSpec, SchedulerSpec, lr_at

log = logging.getLogger(__name__)


def train_step(model: Forecaster, opt: Optimizer, x, y, lr: float) -> float:
    """One zero-grad / forward / backward / update cycle; returns the batch loss."""
    model.train()
    opt.zero_grad()
    # overflow shows up as a non-finite loss or gradient, reported below
    with np.errstate(over="ignore", invalid="ignore"):
        loss = model.loss(x, y)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value}")
        loss.backward()
    opt.step(lr)
    return value


def evaluate_loss(model: Forecaster, x, y) -> float:
    model.eval()
    with np.errstate(over="ignore", invalid="ignore"):
        return model.loss(x, y).item()


def fit(model: Forecaster, train_x: np.ndarray, train_y: np.ndarray, optimizer: OptimizerSpec,
        scheduler: SchedulerSpec, epochs: int, rng: np.random.Generator,
        batch_size: int | None = None, eval_x=None, eval_y=None) -> list[dict]:
    """Train ``model`` in place and return one history entry per epoch.

    ``batch_size=None`` (or anything >= the number of windows) takes one
    full-batch step per epoch; otherwise windows are reshuffled each epoch.
    The eval split is only monitored, never used for stopping.
    """
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    n = len(train_x)
    if batch_size is not None and batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    bs = n if batch_size is None else min(batch_size, n)
    names, params = zip(*model.named_parameters())
    opt = Optimizer(optimizer, params, names)
    history = []
    t = 0
    for epoch in range(1, epochs + 1):
        order = np.arange(n) if bs == n else rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            t += 1
            try:
                batch_loss = train_step(model, opt, train_x[idx], train_y[idx],
                                        lr_at(scheduler, t, optimizer.base_lr))
            except NumericError as exc:
                raise DivergedError(epoch, getattr(exc, "loss", float("nan"))) from exc
            total += batch_loss * len(idx)
        entry = {"epoch": epoch, "train_loss": total / n, "lr": lr_at(scheduler, t, optimizer.base_lr)}
        if eval_x is not None and len(eval_x):
            entry["eval_loss"] = evaluate_loss(model, eval_x, eval_y)
            if not math.isfinite(entry["eval_loss"]):
                raise DivergedError(epoch, entry["eval_loss"])
        history.append(entry)
        if epoch % 50 == 0:
            log.debug("epoch %d train %.6g eval %s", epoch, entry["train_loss"], entry.get("eval_loss"))
    model.eval()
    return history
