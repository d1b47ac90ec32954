"""Reverse-mode differentiation over numpy arrays.

Only the operations the routing models need are provided. Every op records a
closure that accumulates gradients into its parents; ``Tensor.backward`` walks
the graph in reverse topological order.
"""
from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=""):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True) if g.dtype != self.data.dtype else g.copy()
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(_flush_subnormal(node.grad))
                node.grad = None  # interior node; leaves keep theirs

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 else axes)


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=""):
        super().__init__(np.asarray(data), requires_grad=True, name=name)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce(a, b):
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    if a_t and not b_t:
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    elif b_t and not a_t:
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    elif not a_t and not b_t:
        a, b = Tensor(np.asarray(a)), Tensor(np.asarray(b))
    return a, b


# -- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = _coerce(a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _coerce(a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _coerce(a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = _coerce(a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), bw)


def relu(x):
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0).astype(x.data.dtype), (x,), lambda g: x._accum(g * pos))


def tanh(x):
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: x._accum(g * (1.0 - y * y)))


def sigmoid(x):
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _make(y, (x,), lambda g: x._accum(g * y * (1.0 - y)))


def exp(x):
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: x._accum(g * y))


def log(x):
    return _make(np.log(x.data), (x,), lambda g: x._accum(g / x.data))


# -- linear algebra and shapes ---------------------------------------------

def matmul(a, b):
    a, b = _coerce(a, b)

    def bw(g):
        if a.requires_grad:
            bd = b.data if b.ndim > 1 else b.data[:, None]
            ga = g if b.ndim > 1 else g[..., None]
            a._accum(_unbroadcast(ga @ np.swapaxes(bd, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight: one GEMM over the flattened leading axes
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
                if gb.ndim > b.ndim:
                    gb = gb.sum(axis=tuple(range(gb.ndim - b.ndim)))
                gb = _unbroadcast(gb, b.shape)
            b._accum(gb)

    return _make(a.data @ b.data, (a, b), bw)


def sum_(x, axis=None, keepdims=False):
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis, keepdims), 1.0 / count)


def reshape(x, shape):
    return _make(x.data.reshape(shape), (x,), lambda g: x._accum(g.reshape(x.shape)))


def transpose(x, axes):
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: x._accum(np.transpose(g, inv)))


def index(x, key):
    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        x._accum(full)

    return _make(x.data[key], (x,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def gather_rows(x, idx):
    """``out[b, p] = x[b, idx[b, p]]`` for ``x`` of shape (B, n, d)."""
    idx = np.asarray(idx)
    b = np.arange(x.shape[0])[:, None]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (np.broadcast_to(b, idx.shape), idx), g)
        x._accum(full)

    return _make(x.data[b, idx], (x,), bw)


def take_last(x, idx):
    """``out[...] = x[..., idx[...]]``."""
    idx = np.asarray(idx)[..., None]

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        x._accum(full)

    return _make(np.take_along_axis(x.data, idx, axis=-1)[..., 0], (x,), bw)


def scatter_last(vals, idx, n, fill):
    """Place ``vals[..., k]`` at position ``idx[..., k]`` of a length-``n`` axis.

    Unfilled positions take ``fill``; slots with ``idx == -1`` are dropped.
    """
    idx = np.asarray(idx)
    keep = idx >= 0
    safe = np.where(keep, idx, n)  # overflow column, cut below
    shape = vals.shape[:-1] + (n + 1,)
    out = np.full(shape, fill, dtype=vals.data.dtype)
    np.put_along_axis(out, safe, np.where(keep, vals.data, fill), axis=-1)

    def bw(g):
        gp = np.concatenate([g, np.zeros(g.shape[:-1] + (1,), dtype=g.dtype)], axis=-1)
        vals._accum(np.where(keep, np.take_along_axis(gp, safe, axis=-1), 0.0).astype(g.dtype))

    return _make(out[..., :n], (vals,), bw)


# -- fused normalizations --------------------------------------------------

def _flush_subnormal(a):
    # subnormal probabilities carry no signal and slow down BLAS badly
    if a.ndim == 0 or a.dtype.kind != "f":
        return a
    a[np.abs(a) < np.finfo(a.dtype).tiny] = 0
    return a


def masked_softmax(x, mask=None, axis=-1):
    """Softmax along ``axis``; entries with ``mask == False`` get exactly 0."""
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("masked softmax over a fully masked row")
    e = np.exp(z - m)
    p = _flush_subnormal(e / e.sum(axis=axis, keepdims=True))

    def bw(g):
        x._accum(p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return _make(p, (x,), bw)


def masked_log_softmax(x, mask=None, axis=-1):
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("log-softmax over a fully masked row")
    s = z - m
    lse = np.log(np.exp(s).sum(axis=axis, keepdims=True))
    out = s - lse
    p = _flush_subnormal(np.exp(out))

    def bw(g):
        gm = g if mask is None else np.where(mask, g, 0.0)
        x._accum(gm - p * gm.sum(axis=axis, keepdims=True))

    return _make(out, (x,), bw)


def instance_norm(x, axis=1, eps=1e-5):
    """Normalize to zero mean, unit (biased) variance along ``axis``."""
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def bw(g):
        gy_mean = g.mean(axis=axis, keepdims=True)
        gyy_mean = (g * y).mean(axis=axis, keepdims=True)
        x._accum(inv * (g - gy_mean - y * gyy_mean))

    return _make(y, (x,), bw)
