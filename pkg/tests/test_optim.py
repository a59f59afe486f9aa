import math

import numpy as np
import pytest

from deepcast import tensor as T
from deepcast.errors import ConfigError, ContractError, NumericError
from deepcast.optim import (
    KINDS, Optimizer, OptimizerSpec, OptimizerState, SchedulerSpec, lr_at, peak_lr, step, zero_grads,
)
from deepcast.tensor import Tensor


# ---------------------------------------------------------------------------
# scalar oracles, written against the published update rules in plain floats


def oracle_adam(grads, w, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0, decoupled=False):
    m = v = 0.0
    out = []
    for t, gf in enumerate(grads, 1):
        g = gf(w)
        if decoupled:
            w = w - lr * wd * w
        else:
            g = g + wd * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(w)
    return out


def oracle_adamax(grads, w, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = u = 0.0
    out = []
    for t, gf in enumerate(grads, 1):
        g = gf(w)
        m = b1 * m + (1 - b1) * g
        u = max(b2 * u, abs(g) + eps)
        w = w - lr / (1 - b1 ** t) * m / u
        out.append(w)
    return out


def oracle_adagrad(grads, w, lr, eps=1e-10):
    s = 0.0
    out = []
    for gf in grads:
        g = gf(w)
        s += g * g
        w = w - lr * g / (math.sqrt(s) + eps)
        out.append(w)
    return out


def oracle_adadelta(grads, w, lr, rho=0.9, eps=1e-6):
    sq = acc = 0.0
    out = []
    for gf in grads:
        g = gf(w)
        sq = rho * sq + (1 - rho) * g * g
        d = math.sqrt(acc + eps) / math.sqrt(sq + eps) * g
        acc = rho * acc + (1 - rho) * d * d
        w = w - lr * d
        out.append(w)
    return out


def oracle_sgd(grads, w, lr, momentum=0.0):
    buf = None
    out = []
    for gf in grads:
        g = gf(w)
        if momentum:
            buf = g if buf is None else momentum * buf + g
            g = buf
        w = w - lr * g
        out.append(w)
    return out


def oracle_rmsprop(grads, w, lr, alpha=0.99, eps=1e-8):
    sq = 0.0
    out = []
    for gf in grads:
        g = gf(w)
        sq = alpha * sq + (1 - alpha) * g * g
        w = w - lr * g / (math.sqrt(sq) + eps)
        out.append(w)
    return out


def quad_grad(w):
    return 2.0 * (w - 3.0)


def run(spec, n_steps, w0=1.0, lr=None, grad=quad_grad):
    p = Tensor([w0], requires_grad=True)
    opt = Optimizer(spec, [p], ["w"])
    trace = []
    for _ in range(n_steps):
        opt.zero_grad()
        p.grad[:] = grad(p.data[0])
        opt.step(spec.base_lr if lr is None else lr)
        trace.append(p.data[0])
    return trace


TRACE_CASES = {
    "Adam": (dict(base_lr=0.1), lambda g: oracle_adam(g, 1.0, 0.1)),
    "AdamW": (dict(base_lr=0.1), lambda g: oracle_adam(g, 1.0, 0.1, wd=1e-2, decoupled=True)),
    "Adamax": (dict(base_lr=0.002), lambda g: oracle_adamax(g, 1.0, 0.002)),
    "Adagrad": (dict(base_lr=0.5), lambda g: oracle_adagrad(g, 1.0, 0.5)),
    "Adadelta": (dict(base_lr=1.0), lambda g: oracle_adadelta(g, 1.0, 1.0)),
    "SGD": (dict(base_lr=0.05, momentum=0.9), lambda g: oracle_sgd(g, 1.0, 0.05, momentum=0.9)),
    "RMSprop": (dict(base_lr=0.01), lambda g: oracle_rmsprop(g, 1.0, 0.01)),
}


@pytest.mark.parametrize("kind", KINDS)
def test_five_step_trace_matches_oracle(kind):
    kw, oracle = TRACE_CASES[kind]
    got = run(OptimizerSpec(kind, **kw), 5)
    want = oracle([quad_grad] * 5)
    assert max(abs(a - b) for a, b in zip(got, want)) < 1e-12


def test_plain_sgd_and_weight_decay_traces():
    assert max(abs(a - b) for a, b in zip(run(OptimizerSpec("SGD", base_lr=0.1), 5),
                                          oracle_sgd([quad_grad] * 5, 1.0, 0.1))) < 1e-12
    got = run(OptimizerSpec("Adam", base_lr=0.1, weight_decay=0.1), 5)
    want = oracle_adam([quad_grad] * 5, 1.0, 0.1, wd=0.1)
    assert max(abs(a - b) for a, b in zip(got, want)) < 1e-12


def test_sgd_example():
    p = Tensor([1.0], requires_grad=True)
    p.grad[:] = 2.0
    Optimizer(OptimizerSpec("SGD", base_lr=0.1), [p]).step(0.1)
    assert abs(p.data[0] - 0.8) < 1e-15


@pytest.mark.parametrize("g", [2.0, -0.3, 1e-3, 50.0])
def test_adam_first_step_is_sign_of_gradient(g):
    lr = 0.01
    p = Tensor([0.0], requires_grad=True)
    p.grad[:] = g
    Optimizer(OptimizerSpec("Adam", base_lr=lr), [p]).step(lr)
    # m_hat / sqrt(v_hat) = g / |g| up to eps
    assert abs(p.data[0] + lr * math.copysign(1.0, g)) < lr * 1e-8 / abs(g) * 1.01


def test_adamax_three_constant_steps():
    lr = 0.002
    got = run(OptimizerSpec("Adamax", base_lr=lr), 3, w0=0.0, grad=lambda w: 2.0)
    # first step: m = 0.2, u = 2 + eps, step = lr / 0.1 * 0.2 / (2 + eps)
    assert abs(got[0] - (-lr * 2.0 / (2.0 + 1e-8))) < 1e-15
    want = oracle_adamax([lambda w: 2.0] * 3, 0.0, lr)
    assert max(abs(a - b) for a, b in zip(got, want)) < 1e-12


CONVERGENCE = {
    "Adam": (dict(base_lr=0.1), 500),
    # decoupled decay moves the fixed point toward 0; the default 1e-2 settles at 2.988
    "AdamW": (dict(base_lr=0.1, weight_decay=1e-3), 500),
    "Adamax": (dict(base_lr=0.1), 500),
    "Adagrad": (dict(base_lr=1.0), 500),
    "Adadelta": (dict(base_lr=1.0), 5000),
    "SGD": (dict(base_lr=0.1), 500),
    "RMSprop": (dict(base_lr=0.01), 500),
}


@pytest.mark.parametrize("kind", KINDS)
def test_converges_on_quadratic(kind):
    kw, n = CONVERGENCE[kind]
    w = run(OptimizerSpec(kind, **kw), n, w0=0.0)[-1]
    assert abs(w - 3.0) < 1e-2, (kind, w)


def test_adamw_equals_adam_without_decay():
    a = run(OptimizerSpec("Adam", base_lr=0.05), 50)
    b = run(OptimizerSpec("AdamW", base_lr=0.05, weight_decay=0.0), 50)
    assert a == b


def test_adamw_decay_is_decoupled():
    # zero gradient: Adam with L2 would still move through m/v; AdamW just shrinks w
    p = Tensor([2.0], requires_grad=True)
    opt = Optimizer(OptimizerSpec("AdamW", base_lr=0.1, weight_decay=0.5), [p])
    opt.step(0.1)
    assert p.data[0] == 2.0 * (1 - 0.1 * 0.5)


def test_functional_step_keeps_state():
    spec = OptimizerSpec("Adam", base_lr=0.1)
    state = OptimizerState()
    p = Tensor([1.0], requires_grad=True)
    for _ in range(5):
        p.grad[:] = quad_grad(p.data[0])
        step(spec, state, [p], 0.1)
    assert state.t == 5
    assert abs(p.data[0] - oracle_adam([quad_grad] * 5, 1.0, 0.1)[-1]) < 1e-12


def test_defaults_table():
    assert OptimizerSpec("Adam").eps == 1e-8
    assert (OptimizerSpec("adam").beta1, OptimizerSpec("adam").beta2) == (0.9, 0.999)
    assert OptimizerSpec("AdamW").weight_decay == 1e-2
    assert OptimizerSpec("Adadelta").rho == 0.9
    assert OptimizerSpec("RMSprop").alpha == 0.99
    with pytest.raises(ConfigError):
        OptimizerSpec("Lion")
    with pytest.raises(ConfigError):
        OptimizerSpec("Adam", base_lr=0.0)
    with pytest.raises(ConfigError):
        OptimizerSpec("Adam", beta2=1.0)


def test_step_errors():
    p = Tensor([1.0], requires_grad=True)
    frozen = Tensor([1.0])
    with pytest.raises(ContractError, match="frozen"):
        Optimizer(OptimizerSpec("SGD"), [p, frozen], ["w", "frozen"]).step(0.1)
    p.grad[:] = np.nan
    with pytest.raises(NumericError, match="enc.W"):
        Optimizer(OptimizerSpec("Adam"), [p], ["enc.W"]).step(0.1)


# ---------------------------------------------------------------------------
# scheduler


def test_scheduler_peak_value():
    s = SchedulerSpec(d_model=64, warmup_steps=3000)
    assert abs(lr_at(s, 3000, 1.0) - 1 / (8 * math.sqrt(3000))) < 1e-18
    assert abs(lr_at(s, 3000, 1.0) - 0.002282) < 1e-6
    assert lr_at(s, 3000, 1.0) == pytest.approx(peak_lr(s, 1.0), rel=1e-15)
    for base, d, w in [(2.0, 16, 10), (1.0, 512, 4000)]:
        s = SchedulerSpec(d_model=d, warmup_steps=w)
        assert lr_at(s, w, base) == pytest.approx(base * d ** -0.5 * w ** -0.5, rel=1e-15)


def test_scheduler_shape():
    s = SchedulerSpec(d_model=64, warmup_steps=50)
    lrs = [lr_at(s, t, 1.0) for t in range(1, 200)]
    assert all(x > 0 for x in lrs)
    assert all(a < b for a, b in zip(lrs[:49], lrs[1:50]))
    assert all(a > b for a, b in zip(lrs[49:], lrs[50:]))
    # both branches agree at the warmup step
    assert 50 ** -0.5 == pytest.approx(50 * 50 ** -1.5, rel=1e-15)


def test_scheduler_errors_and_constant():
    s = SchedulerSpec()
    with pytest.raises(ContractError):
        lr_at(s, 0, 1.0)
    assert lr_at(SchedulerSpec("Constant"), 17, 0.01) == 0.01
    with pytest.raises(ConfigError):
        SchedulerSpec(warmup_steps=0)
    with pytest.raises(ConfigError):
        SchedulerSpec("Cosine")


# ---------------------------------------------------------------------------
# zero_grads


def test_zero_grads():
    w = Tensor([1.0, -2.0], requires_grad=True)
    x = Tensor([3.0, 4.0])

    def loss():
        return T.sum_all(T.mul(w, x))

    loss().backward()
    loss().backward()
    # linear loss: two backward calls without zeroing double the gradient
    assert np.array_equal(w.grad, 2 * x.data)
    zero_grads([w])
    assert np.array_equal(w.grad, np.zeros(2))
    loss().backward()
    assert np.array_equal(w.grad, x.data)

    p = Tensor([0.0], requires_grad=True)
    opt = Optimizer(OptimizerSpec("SGD", base_lr=1.0), [p])
    p.grad[:] = 100.0
    opt.zero_grad()
    T.sum_all(T.scale(p, 3.0)).backward()
    opt.step(1.0)
    assert p.data[0] == -3.0
