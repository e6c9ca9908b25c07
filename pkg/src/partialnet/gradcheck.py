"""Central-difference gradient checking for the tensor ops."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Rng, Tensor

THRESHOLD = 1e-4


def grad_check(fn, inputs, eps=1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps the list of ``inputs`` (float64 tensors) to a scalar tensor.
    Every element of every input that requires gradients is probed. The
    relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check needs float64 inputs")
        if not np.all(np.isfinite(t.data)):
            raise ValueError("grad_check: non-finite input")
    for t in inputs:
        t.grad = None
    loss = fn(inputs)
    if not np.isfinite(loss.data).all():
        raise ValueError("grad_check: non-finite loss")
    T.backward(loss)

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = float(fn(inputs).data)
            flat[idx] = orig - eps
            down = float(fn(inputs).data)
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValueError("grad_check: non-finite probe")
            a = float(analytic.reshape(-1)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(shape, dtype=np.float64) * scale, requires_grad=True)


def _weighted(out, rng):
    # fixed random projection gives every output element a distinct weight
    w = Tensor(rng.normal(out.shape, dtype=np.float64))
    return (out * w).sum()


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(shape, dtype=np.float64)
    small = np.abs(x) < margin
    x[small] = np.where(x[small] >= 0, margin, -margin)
    return x


def _case_conv2d(rng):
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x, w, b = _param(rng, 2, 3, 5, 5), _param(rng, 4, 3, 3, 3), _param(rng, 4)
    proj = rng.spawn(1)
    return lambda ins: _weighted(T.conv2d(ins[0], ins[1], ins[2], stride, pad), Rng(proj.seed)), [x, w, b]


def _case_batchnorm_train(rng):
    x, g, b = _param(rng, 4, 3, 2, 2), _param(rng, 3), _param(rng, 3)
    proj = rng.spawn(1)

    def fn(ins):
        running = {"mean": np.zeros(3), "var": np.ones(3)}
        return _weighted(T.batchnorm2d(ins[0], ins[1], ins[2], running, True), Rng(proj.seed))

    return fn, [x, g, b]


def _case_batchnorm_eval(rng):
    x, g, b = _param(rng, 3, 2, 2, 2), _param(rng, 2), _param(rng, 2)
    mean, var = rng.normal((2,), dtype=np.float64), 0.5 + rng.random(2)
    proj = rng.spawn(1)

    def fn(ins):
        running = {"mean": mean.copy(), "var": var.copy()}
        return _weighted(T.batchnorm2d(ins[0], ins[1], ins[2], running, False), Rng(proj.seed))

    return fn, [x, g, b]


def _case_relu(rng):
    x = Tensor(_away_from_zero(rng, (3, 4)), requires_grad=True)
    proj = rng.spawn(1)
    return lambda ins: _weighted(T.relu(ins[0]), Rng(proj.seed)), [x]


def _case_linear(rng):
    x, w, b = _param(rng, 3, 4), _param(rng, 5, 4), _param(rng, 5)
    proj = rng.spawn(1)
    return lambda ins: _weighted(T.linear(*ins), Rng(proj.seed)), [x, w, b]


def _case_global_avg_pool(rng):
    x = _param(rng, 2, 3, 3, 4)
    proj = rng.spawn(1)
    return lambda ins: _weighted(T.global_avg_pool(ins[0]), Rng(proj.seed)), [x]


def _case_avg_pool2d(rng):
    x = _param(rng, 2, 2, 5, 4)
    proj = rng.spawn(1)
    return lambda ins: _weighted(T.avg_pool2d(ins[0], 2), Rng(proj.seed)), [x]


def _case_softmax_cross_entropy(rng):
    logits = _param(rng, 4, 5, scale=2.0)
    labels = rng.integers(0, 5, size=4)
    return lambda ins: T.softmax_cross_entropy(ins[0], labels), [logits]


def _case_add(rng):
    a, b = _param(rng, 2, 3, 2, 2), _param(rng, 2, 3, 2, 2)
    proj = rng.spawn(1)
    return lambda ins: _weighted(ins[0] + ins[1], Rng(proj.seed)), [a, b]


def _case_mul(rng):
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    proj = rng.spawn(1)
    return lambda ins: _weighted(ins[0] * ins[1], Rng(proj.seed)), [a, b]


def _case_concat(rng):
    a, b = _param(rng, 2, 2, 3, 3), _param(rng, 2, 3, 3, 3)
    proj = rng.spawn(1)
    return lambda ins: _weighted(T.concat(ins, axis=1), Rng(proj.seed)), [a, b]


def _case_reshape(rng):
    x = _param(rng, 2, 3, 2, 2)
    proj = rng.spawn(1)
    return lambda ins: _weighted(T.flatten(ins[0]), Rng(proj.seed)), [x]


def _case_sum_mean(rng):
    x = _param(rng, 3, 4)
    w = rng.normal((3, 4), dtype=np.float64)
    return lambda ins: (ins[0] * Tensor(w)).sum() + (ins[0] * ins[0]).mean(), [x]


def _case_composite(rng):
    """conv -> pool -> linear -> cross-entropy on a 4x3x5x5 batch."""
    x, w, cb = _param(rng, 4, 3, 5, 5), _param(rng, 6, 3, 3, 3, scale=0.5), _param(rng, 6)
    fw, fb = _param(rng, 3, 6), _param(rng, 3)
    labels = rng.integers(0, 3, size=4)

    def fn(ins):
        h = T.conv2d(ins[0], ins[1], ins[2], 1, 1)
        h = T.global_avg_pool(h)
        return T.softmax_cross_entropy(T.linear(h, ins[3], ins[4]), labels)

    return fn, [x, w, cb, fw, fb]


# one entry per differentiable op, in report order
CASES = {
    "add": _case_add,
    "mul": _case_mul,
    "sum/mean": _case_sum_mean,
    "reshape": _case_reshape,
    "concat": _case_concat,
    "relu": _case_relu,
    "linear": _case_linear,
    "conv2d": _case_conv2d,
    "batchnorm2d[train]": _case_batchnorm_train,
    "batchnorm2d[eval]": _case_batchnorm_eval,
    "global_avg_pool": _case_global_avg_pool,
    "avg_pool2d": _case_avg_pool2d,
    "softmax_cross_entropy": _case_softmax_cross_entropy,
    "composite": _case_composite,
}


def run_suite(probes=10, seed=0, eps=1e-4) -> dict:
    """Max relative error per op over ``probes`` random instances each."""
    results = {}
    base = Rng(seed)
    for k, (name, case) in enumerate(CASES.items()):
        worst = 0.0
        for i in range(probes):
            fn, inputs = case(base.spawn(1000 * k + i))
            worst = max(worst, grad_check(fn, inputs, eps))
        results[name] = worst
    return results
