"""Transformer building blocks on top of :mod:`deepcast.tensor`.

Layers hold their parameters as leaf tensors and expose them through
:meth:`Module.named_parameters`, whose order is the attribute definition order.
That order is what checkpoints and optimizer state rely on.
"""
from __future__ import annotations

import enum
import math
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


class NormPlacement(str, enum.Enum):
    """Where layer normalisation sits relative to the residual connection."""

    PRE_LN = "PreLN"
    POST_LN = "PostLN"

    @classmethod
    def parse(cls, value) -> NormPlacement:
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "").replace("_", "").lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ConfigError(f"unknown norm placement {value!r} (expected PreLN or PostLN)")


class Module:
    """Minimal container: parameters, child modules, and a training flag."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator[Module]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def linear(x: Tensor, W: Tensor, b: Tensor | None) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {W.shape}")
    y = T.matmul(x, W)
    return T.add_bias(y, b) if b is not None else y


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.W = xavier_uniform(rng, d_in, d_out)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.W, self.b)


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd ones."""
    if d_model % 2:
        raise ConfigError(f"positional encoding needs an even d_model, got {d_model}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.empty((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def add_positional_encoding(x: Tensor) -> Tensor:
    pe = positional_encoding(x.shape[-2], x.shape[-1])
    return T.add(x, Tensor(np.broadcast_to(pe, x.shape)))


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(width), requires_grad=True)
        self.bias = Tensor(np.zeros(width), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``n_heads`` column blocks of width ``d_model // n_heads``.

    Queries come from ``q_in``; keys and values from ``k_in`` / ``v_in``.  With
    ``causal=True`` position ``i`` can only attend to positions ``j <= i``.
    The weights of the most recent call are kept in ``last_weights`` as an
    array of shape ``(..., n_heads, n_q, n_k)``.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 attn_dropout: float = 0.0):
        if n_heads < 1 or d_model % n_heads:
            raise ConfigError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.o = Linear(d_model, d_model, rng)
        self.attn_dropout = attn_dropout
        self.rng = rng
        self.last_weights: np.ndarray | None = None

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor, causal: bool = False) -> Tensor:
        for t in (q_in, k_in, v_in):
            if t.shape[-1] != self.d_model:
                raise DimensionError(f"attention input {t.shape} does not end in d_model={self.d_model}")
        Q, K, V = self.q(q_in), self.k(k_in), self.v(v_in)
        scale = 1.0 / math.sqrt(self.d_head)
        heads, weights = [], []
        for h in range(self.n_heads):
            cols = (Ellipsis, slice(h * self.d_head, (h + 1) * self.d_head))
            qh, kh, vh = (Q[cols], K[cols], V[cols]) if self.n_heads > 1 else (Q, K, V)
            scores = T.scale(T.matmul(qh, T.transpose(kh)), scale)
            if causal:
                scores = T.causal_mask(scores)
            w = T.softmax(scores, axis=-1)
            weights.append(w.data)
            w = T.dropout(w, self.attn_dropout, self.training, self.rng)
            heads.append(T.matmul(w, vh))
        self.last_weights = np.stack(weights, axis=-3)
        merged = heads[0] if self.n_heads == 1 else T.concat(heads, axis=-1)
        return self.o(merged)


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor,
                         attn: MultiHeadAttention, causal: bool = False) -> Tensor:
    return attn(q_in, k_in, v_in, causal=causal)


class FeedForward(Module):
    """Position-wise two-layer network with a ReLU in between."""

    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.fc1 = Linear(d_model, d_ff, rng)
        self.fc2 = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


def residual_block(x: Tensor, sublayer: Callable[[Tensor], Tensor], norm: LayerNorm,
                   placement: NormPlacement, dropout_p: float = 0.0, training: bool = False,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Wrap ``sublayer`` in a residual connection with the given norm placement.

    PostLN: ``norm(x + dropout(sublayer(x)))``.
    PreLN:  ``x + dropout(sublayer(norm(x)))``.
    """
    placement = NormPlacement.parse(placement)
    inner = norm(x) if placement is NormPlacement.PRE_LN else x
    y = sublayer(inner)
    if y.shape != x.shape:
        raise DimensionError(f"residual sublayer changed shape {x.shape} -> {y.shape}")
    y = T.dropout(y, dropout_p, training, rng)
    out = T.add(x, y)
    return norm(out) if placement is NormPlacement.POST_LN else out
