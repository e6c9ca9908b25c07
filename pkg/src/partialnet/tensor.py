"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every op that takes a tensor requiring
gradients records its parents and a closure mapping the output gradient to
input gradients; :func:`backward` replays that tape in reverse.

Training runs in float32; gradient checks feed float64 arrays through the
same code paths (ops keep the dtype of their inputs).
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Rng:
    """Deterministic random stream backed by numpy's PCG64 bit generator.

    The same seed gives the same draws on every run and platform for a
    fixed numpy version.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, std=1.0, dtype=np.float32):
        out = self.gen.standard_normal(size=shape, dtype=dtype)
        if std != 1.0:
            out *= out.dtype.type(std)
        return out

    def integers(self, low, high, size=None):
        return self.gen.integers(low, high, size=size)

    def random(self, size=None):
        return self.gen.random(size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def spawn(self, key: int) -> "Rng":
        """Child stream keyed by ``key``; independent of draws already made."""
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, int(key)])
        return Rng(int(ss.generate_state(1, np.uint64)[0]))


class Tensor:
    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    """Create an op output, recording the tape only if some parent needs grads."""
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def backward(loss: Tensor) -> dict:
    """Reverse-mode sweep from a scalar ``loss``.

    Sets ``.grad`` on every leaf that requires gradients and returns a
    mapping from leaf name to gradient array for the named ones.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring gradients")

    # iterative post-order DFS; deep nets overflow recursion
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    out = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            if node.name is not None:
                out[node.name] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return out


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def tsum(a: Tensor) -> Tensor:
    def bw(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(a.data.sum()), (a,), bw)


def tmean(a: Tensor) -> Tensor:
    n = a.size

    def bw(g):
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(np.asarray(a.data.mean()), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), bw)


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), bw)


def concat(tensors, axis=1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


# ---------------------------------------------------------------- layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _make(out, parents, bw)


def _im2col(x, k, stride, pad):
    """(N, C, H, W) -> patch matrix (N*Ho*Wo, C*k*k), rows in (n, y, x) order."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(dcols, x_shape, k, stride, pad, ho, wo):
    n, c, h, w = x_shape
    d = dcols.reshape(n, ho, wo, c, k, k)
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dx = dx[:, :, pad:pad + h, pad:pad + w]
    return dx


def _conv2d_backward(g, x, w, cols, stride, pad, ho, wo):
    """Gradients of a strided, padded cross-correlation: (dx, dw, db)."""
    o = w.shape[0]
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (g2.T @ cols).reshape(w.shape)
    db = g2.sum(axis=0)
    dcols = g2 @ w.reshape(o, -1)
    dx = _col2im(dcols, x.shape, w.shape[2], stride, pad, ho, wo)
    return dx, dw, db


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, pad=0) -> Tensor:
    """Cross-correlation of an NCHW batch with an (O, I, k, k) filter bank."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and filters, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, i, kh, kw = weight.shape
    if c != i:
        raise ValueError(f"conv2d: input has {c} channels, filters expect {i}")
    if kh != kw:
        raise ValueError("conv2d: only square kernels are supported")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ValueError(f"conv2d: padded input {h + 2 * pad}x{w + 2 * pad} smaller than kernel {kh}")
    if stride < 1:
        raise ValueError("conv2d: stride must be positive")
    cols, ho, wo = _im2col(x.data, kh, stride, pad)
    out = cols @ weight.data.reshape(o, -1).T
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"conv2d: bias shape {bias.shape} does not match {o} filters")
        out = out + bias.data
        parents.append(bias)
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def bw(g):
        # looked up at call time so a test can swap in a broken kernel
        dx, dw, db = _BACKWARD["conv2d"](g, x.data, weight.data, cols, stride, pad, ho, wo)
        return (dx, dw) if bias is None else (dx, dw, db)

    return _make(out, parents, bw)


_BACKWARD = {"conv2d": _conv2d_backward}


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running: dict, training: bool,
                eps=1e-5, momentum=0.1) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    ``running`` holds ``mean`` and ``var`` arrays; in training mode they are
    updated in place by an exponential moving average (unbiased batch
    variance, as is conventional), whatever the status of gamma and beta.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(f"batchnorm2d: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    axes = (0, 2, 3)
    shp = (1, -1, 1, 1)
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running["mean"] *= 1 - momentum
        running["mean"] += momentum * mu
        running["var"] *= 1 - momentum
        running["var"] += momentum * unbiased
    else:
        mu, var = running["mean"], running["var"]
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(shp)) * inv_std.reshape(shp)
    out = gamma.data.reshape(shp) * xhat + beta.data.reshape(shp)

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(shp)
        if training:
            mean_d = dxhat.mean(axis=axes, keepdims=True)
            mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
            dx = (dxhat - mean_d - xhat * mean_dx) * inv_std.reshape(shp)
        else:
            dx = dxhat * inv_std.reshape(shp)
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape

    def bw(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),)

    return _make(x.data.mean(axis=(2, 3)), (x,), bw)


def avg_pool2d(x: Tensor, size=2) -> Tensor:
    """Non-overlapping average pooling; trailing rows/columns that do not fill a window are dropped."""
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise ValueError(f"avg_pool2d: input {h}x{w} smaller than window {size}")
    xc = x.data[:, :, :ho * size, :wo * size]
    out = xc.reshape(n, c, ho, size, wo, size).mean(axis=(3, 5))

    def bw(g):
        dx = np.zeros_like(x.data)
        spread = np.repeat(np.repeat(g / (size * size), size, axis=2), size, axis=3)
        dx[:, :, :ho * size, :wo * size] = spread
        return (dx,)

    return _make(out, (x,), bw)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1
        return (d * (g / n),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


# ---------------------------------------------------------------- init


def init_kaiming(shape, fan_in: int, rng: Rng, dtype=np.float32) -> Tensor:
    """i.i.d. N(0, 2/fan_in) entries."""
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) == 0:
        raise ValueError(f"cannot initialize zero-element shape {shape}")
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return Tensor(rng.normal(shape, std=math.sqrt(2.0 / fan_in), dtype=dtype))
