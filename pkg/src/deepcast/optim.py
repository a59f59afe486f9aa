"""First-order optimizers and the warmup / inverse-square-root learning-rate schedule.

Update rules follow the original publications; hyperparameter defaults are
those of ``torch.optim`` so that runs are comparable with common practice.

=========  ========  =====================================================
kind       base lr   other defaults
=========  ========  =====================================================
Adam       1e-3      betas=(0.9, 0.999), eps=1e-8
AdamW      1e-3      betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2
Adamax     2e-3      betas=(0.9, 0.999), eps=1e-8
Adagrad    1e-2      eps=1e-10
Adadelta   1.0       rho=0.9, eps=1e-6
SGD        1e-3      momentum=0
RMSprop    1e-2      alpha=0.99, eps=1e-8
=========  ========  =====================================================

The learning rate actually applied at each step is supplied by the caller
(normally from :func:`lr_at`), so ``base_lr`` only matters through the
scheduler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .tensor import Tensor

KINDS = ("Adam", "AdamW", "Adamax", "Adagrad", "Adadelta", "SGD", "RMSprop")

DEFAULT_LR = {
    "Adam": 1e-3, "AdamW": 1e-3, "Adamax": 2e-3, "Adagrad": 1e-2,
    "Adadelta": 1.0, "SGD": 1e-3, "RMSprop": 1e-2,
}
DEFAULT_EPS = {
    "Adam": 1e-8, "AdamW": 1e-8, "Adamax": 1e-8, "Adagrad": 1e-10,
    "Adadelta": 1e-6, "SGD": 0.0, "RMSprop": 1e-8,
}


def canonical_kind(kind: str) -> str:
    for k in KINDS:
        if k.lower() == str(kind).lower():
            return k
    raise ConfigError(f"unknown optimizer {kind!r}; expected one of {', '.join(KINDS)}")


@dataclass
class OptimizerSpec:
    kind: str = "Adam"
    base_lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float | None = None
    weight_decay: float | None = None
    momentum: float = 0.0
    rho: float = 0.9
    alpha: float = 0.99

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        if self.base_lr is None:
            self.base_lr = DEFAULT_LR[self.kind]
        if self.eps is None:
            self.eps = DEFAULT_EPS[self.kind]
        if self.weight_decay is None:
            self.weight_decay = 1e-2 if self.kind == "AdamW" else 0.0
        self.validate()

    def validate(self) -> None:
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        for name in ("beta1", "beta2", "rho", "alpha", "momentum"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if self.eps < 0 or self.weight_decay < 0:
            raise ConfigError("eps and weight_decay must be non-negative")


@dataclass
class SchedulerSpec:
    kind: str = "WarmupInvSqrt"
    d_model: int = 64
    warmup_steps: int = 3000

    def __post_init__(self):
        if self.kind not in ("WarmupInvSqrt", "Constant"):
            raise ConfigError(f"unknown scheduler {self.kind!r}; expected WarmupInvSqrt or Constant")
        if self.warmup_steps < 1:
            raise ConfigError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if self.d_model < 1:
            raise ConfigError(f"d_model must be >= 1, got {self.d_model}")


def lr_at(spec: SchedulerSpec, t: int, base_lr: float) -> float:
    """Learning rate for the ``t``-th optimizer step (1-based)."""
    if t < 1:
        raise ContractError(f"scheduler steps are 1-based, got t={t}")
    if spec.kind == "Constant":
        return base_lr
    return base_lr * spec.d_model ** -0.5 * min(t ** -0.5, t * spec.warmup_steps ** -1.5)


@dataclass
class OptimizerState:
    t: int = 0
    buffers: list[dict[str, np.ndarray]] = field(default_factory=list)


class Optimizer:
    """Applies one ``OptimizerSpec`` update rule to a fixed list of parameters."""

    def __init__(self, spec: OptimizerSpec, params: Sequence[Tensor], names: Sequence[str] | None = None):
        self.spec = spec
        self.params = list(params)
        self.names = list(names) if names is not None else [f"param[{i}]" for i in range(len(self.params))]
        self.state = OptimizerState(buffers=[{} for _ in self.params])

    def zero_grad(self) -> None:
        zero_grads(self.params)

    def step(self, lr: float) -> None:
        for name, p in zip(self.names, self.params):
            if p.grad is None:
                raise ContractError(f"{name} has no gradient")
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for {name}")
        self.state.t += 1
        update = _RULES[self.spec.kind]
        for p, buf in zip(self.params, self.state.buffers):
            update(self.spec, buf, p, p.grad, lr, self.state.t)


def step(spec: OptimizerSpec, state: OptimizerState, params: Sequence[Tensor], lr: float) -> None:
    """Functional form of :meth:`Optimizer.step` operating on an explicit state."""
    opt = Optimizer(spec, params)
    if not state.buffers:
        state.buffers = [{} for _ in params]
    opt.state = state
    opt.step(lr)


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def _buf(buf, key, like):
    if key not in buf:
        buf[key] = np.zeros_like(like)
    return buf[key]


def _adam(spec, buf, p, g, lr, t):
    if spec.kind == "AdamW" and spec.weight_decay:
        p.data *= 1.0 - lr * spec.weight_decay
    elif spec.weight_decay:
        g = g + spec.weight_decay * p.data
    m = _buf(buf, "m", g)
    v = _buf(buf, "v", g)
    m *= spec.beta1
    m += (1.0 - spec.beta1) * g
    v *= spec.beta2
    v += (1.0 - spec.beta2) * g * g
    m_hat = m / (1.0 - spec.beta1 ** t)
    v_hat = v / (1.0 - spec.beta2 ** t)
    p.data -= lr * m_hat / (np.sqrt(v_hat) + spec.eps)


def _adamax(spec, buf, p, g, lr, t):
    if spec.weight_decay:
        g = g + spec.weight_decay * p.data
    m = _buf(buf, "m", g)
    u = _buf(buf, "u", g)
    m *= spec.beta1
    m += (1.0 - spec.beta1) * g
    np.maximum(spec.beta2 * u, np.abs(g) + spec.eps, out=u)
    p.data -= (lr / (1.0 - spec.beta1 ** t)) * m / u


def _adagrad(spec, buf, p, g, lr, t):
    if spec.weight_decay:
        g = g + spec.weight_decay * p.data
    s = _buf(buf, "sum_sq", g)
    s += g * g
    p.data -= lr * g / (np.sqrt(s) + spec.eps)


def _adadelta(spec, buf, p, g, lr, t):
    if spec.weight_decay:
        g = g + spec.weight_decay * p.data
    sq = _buf(buf, "sq_avg", g)
    acc = _buf(buf, "acc_delta", g)
    sq *= spec.rho
    sq += (1.0 - spec.rho) * g * g
    delta = np.sqrt(acc + spec.eps) / np.sqrt(sq + spec.eps) * g
    acc *= spec.rho
    acc += (1.0 - spec.rho) * delta * delta
    p.data -= lr * delta


def _sgd(spec, buf, p, g, lr, t):
    if spec.weight_decay:
        g = g + spec.weight_decay * p.data
    if spec.momentum:
        if "velocity" not in buf:
            buf["velocity"] = g.copy()
        else:
            buf["velocity"] *= spec.momentum
            buf["velocity"] += g
        g = buf["velocity"]
    p.data -= lr * g


def _rmsprop(spec, buf, p, g, lr, t):
    if spec.weight_decay:
        g = g + spec.weight_decay * p.data
    sq = _buf(buf, "sq_avg", g)
    sq *= spec.alpha
    sq += (1.0 - spec.alpha) * g * g
    p.data -= lr * g / (np.sqrt(sq) + spec.eps)


_RULES = {
    "Adam": _adam, "AdamW": _adam, "Adamax": _adamax, "Adagrad": _adagrad,
    "Adadelta": _adadelta, "SGD": _sgd, "RMSprop": _rmsprop,
}


def peak_lr(spec: SchedulerSpec, base_lr: float) -> float:
    return base_lr / math.sqrt(spec.d_model * spec.warmup_steps)
