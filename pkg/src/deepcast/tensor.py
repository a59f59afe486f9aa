"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure computing the parents' gradient contributions.  Calling
:meth:`Tensor.backward` on a scalar walks that graph once in reverse
topological order.

Broadcasting is deliberately limited.  Binary elementwise operations demand
equal shapes; the only implicit expansions are a bias vector added over the
last axis (:func:`add_bias`) and a 2-D weight matrix shared across the leading
batch axes of :func:`matmul`.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError

DTYPE = np.float64

# Additive score for masked attention positions.  exp(-1e9 - max) underflows to
# exactly 0.0 in float64, so masked weights are exact zeros.
MASK_VALUE = -1e9


def make_rng(seed: int) -> np.random.Generator:
    """Return the package's reproducible generator: Philox-4x64 (counter based)."""
    return np.random.Generator(np.random.Philox(int(seed)))


class Tensor:
    """An n-dimensional float64 array that can take part in autodiff.

    Leaves created with ``requires_grad=True`` own a zero-initialised ``grad``
    buffer of the same shape.  Results of operations carry ``grad=None``;
    their gradients only live for the duration of a backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        if arr.ndim == 0:
            # scalars are stored as shape (1,)
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out.op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    # operator sugar; all of these route through the functional API below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into the ``grad`` of every leaf that requires it."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that is not part of a recorded graph")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either 2-D (shared across every leading axis of ``a``) or has the
    same leading axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    if shared:
        # one 2-D BLAS call instead of a loop over the leading axes
        k, n = bd.shape
        a2 = ad.reshape(-1, k)
        out = (a2 @ bd).reshape(ad.shape[:-1] + (n,))

        def backward(g):
            g2 = g.reshape(-1, n)
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2
    else:
        out = ad @ bd

        def backward(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return Tensor._result(out, (a, b), backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""

    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return Tensor._result(np.swapaxes(x.data, -1, -2), (x,), backward, "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape

    def backward(g):
        return (g.reshape(src),)

    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return Tensor._result(out, (x,), backward, "reshape")


def take(x: Tensor, index) -> Tensor:
    """Basic (slice / integer) indexing with a scatter-add backward."""
    src = x.shape

    def backward(g):
        full = np.zeros(src, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    out = np.array(x.data[index], dtype=DTYPE)
    return Tensor._result(out, (x,), backward, "take")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
            x.shape[i] != xs[0].shape[i] for i in range(x.ndim) if i != ax
        ):
            raise DimensionError(f"concat: shapes {[t.shape for t in xs]} disagree off axis {axis}")
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._result(np.concatenate([x.data for x in xs], axis=ax), xs, backward, "concat")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    return Tensor._result(x.data * c, (x,), lambda g: (g * c,), "scale")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with the vector ``b`` repeated along every row of ``x``."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    width = b.shape[0]

    def backward(g):
        return g, g.reshape(-1, width).sum(axis=0)

    return Tensor._result(x.data + b.data, (x, b), backward, "add_bias")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def elementwise(x: Tensor, kind: str, other: Tensor | None = None) -> Tensor:
    """Dispatch by name: relu, tanh, sigmoid, add, mul, sub."""
    unary = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}
    binary = {"add": add, "mul": mul, "sub": sub}
    if kind in unary:
        return unary[kind](x)
    if kind in binary:
        if other is None:
            raise ContractError(f"{kind} needs a second operand")
        return binary[kind](x, other)
    raise ConfigError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and normalisation


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor._result(
        np.array([x.data.sum()]), (x,), lambda g: (np.full(shape, g[0]),), "sum"
    )


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return Tensor._result(
        np.array([x.data.mean()]), (x,), lambda g: (np.full(shape, g[0] / n),), "mean"
    )


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error as a scalar tensor."""
    diff = sub(pred, target)
    return mean_all(mul(diff, diff))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax: input contains non-finite values")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (x,), backward, "softmax")


def causal_mask(scores: Tensor) -> Tensor:
    """Replace scores with ``j > i`` (last two axes) by a large negative constant."""
    n, m = scores.shape[-2:]
    future = np.triu(np.ones((n, m), dtype=bool), k=1)
    out = np.where(future, MASK_VALUE, scores.data)
    return Tensor._result(out, (scores,), lambda g: (np.where(future, 0.0, g),), "causal_mask")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row over the last axis with its population variance, then scale and shift."""
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {width}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        gx_hat = g * gd
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = (g * xhat).reshape(-1, width).sum(axis=0)
        gbias = g.reshape(-1, width).sum(axis=0)
        return gx, ggain, gbias

    return Tensor._result(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= p
    mask = keep / (1.0 - p)
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
