"""Dense layers and multi-head attention on top of :mod:`.autograd`."""
from __future__ import annotations

import math
from typing import Dict, Iterator, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Parameter


class Module:
    """Parameter container; attributes holding parameters or modules are discovered."""

    def named_parameters(self, prefix="") -> Iterator[Tuple[str, Parameter]]:
        for key, val in vars(self).items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in own.items():
            arr = np.asarray(state[k])
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, dtype=np.float32):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter(uniform_init(rng, (n_in, n_out), n_in, dtype))
        self.bias = Parameter(uniform_init(rng, (n_out,), n_in, dtype)) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected last dim {self.n_in}, got {x.shape[-1]}")
        y = ag.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class MLP(Module):
    """Affine layers with ReLU between them (none after the last)."""

    def __init__(self, sizes: Sequence[int], rng, dtype=np.float32):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.layers = [Linear(a, b, rng, dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ag.relu(x)
        return x


def mlp_forward(x, layers: MLP):
    return layers(ag.as_tensor(x))


def split_heads(x, n_heads):
    """(B, L, d) -> (B, h, L, d/h)."""
    B, L, d = x.shape
    return ag.transpose(ag.reshape(x, (B, L, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x):
    B, h, L, dk = x.shape
    return ag.reshape(ag.transpose(x, (0, 2, 1, 3)), (B, L, h * dk))


def multi_head_attention(q, k, v, n_heads, mask=None):
    """Scaled dot-product attention per head on already projected inputs.

    ``q`` is (B, Lq, d), ``k``/``v`` are (B, Lk, d); ``mask`` (B, Lq, Lk) marks
    keys that may be attended. Returns (B, Lq, d) with heads concatenated.
    """
    d = q.shape[-1]
    if d % n_heads:
        raise ValueError(f"embedding dim {d} is not divisible by {n_heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ValueError("query/key/value shapes are inconsistent")
    qh, kh, vh = split_heads(q, n_heads), split_heads(k, n_heads), split_heads(v, n_heads)
    scores = ag.matmul(qh, ag.transpose(kh, (0, 1, 3, 2))) * (1.0 / math.sqrt(d // n_heads))
    m = None if mask is None else np.broadcast_to(mask[:, None], scores.shape)
    w = ag.masked_softmax(scores, m)
    return merge_heads(ag.matmul(w, vh))


class MultiHeadAttention(Module):
    def __init__(self, d, n_heads, rng, dtype=np.float32):
        if d % n_heads:
            raise ValueError(f"embedding dim {d} is not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.wq = Linear(d, d, rng, bias=False, dtype=dtype)
        self.wk = Linear(d, d, rng, bias=False, dtype=dtype)
        self.wv = Linear(d, d, rng, bias=False, dtype=dtype)
        self.combine = Linear(d, d, rng, dtype=dtype)

    def forward(self, x, context=None, mask=None):
        context = x if context is None else context
        att = multi_head_attention(self.wq(x), self.wk(context), self.wv(context), self.n_heads, mask)
        return self.combine(att)


def mha_forward(queries, keys, values, n_heads, mha: MultiHeadAttention = None):
    if mha is None:
        return multi_head_attention(ag.as_tensor(queries), ag.as_tensor(keys), ag.as_tensor(values), n_heads)
    return mha.combine(multi_head_attention(mha.wq(queries), mha.wk(keys), mha.wv(values), n_heads))


class InstanceNorm(Module):
    """Per-instance, per-channel normalization over the token axis, with affine."""

    def __init__(self, d, dtype=np.float32):
        self.gamma = Parameter(np.ones(d, dtype=dtype))
        self.beta = Parameter(np.zeros(d, dtype=dtype))

    def forward(self, x):
        return ag.instance_norm(x, axis=1) * self.gamma + self.beta


def clip_scores(u, c=50.0):
    if c <= 0:
        raise ValueError("clip constant must be positive")
    return ag.tanh(ag.as_tensor(u)) * c


def masked_softmax(u, mask):
    return ag.masked_softmax(ag.as_tensor(u), mask)
