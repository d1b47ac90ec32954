"""Central-difference gradient verification."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, no_grad

# central differences carry ~1e-11 of noise; exactly-zero gradients are
# compared against this scale instead of against that noise
FLOOR = 1e-6
# parameter tensors whose true gradient is zero (biases feeding a normalization)
# are measured against this fraction of the largest gradient in the model
REL_FLOOR = 1e-3


def numeric_grad(fn: Callable, arrays: Sequence[np.ndarray], h: float = 1e-5):
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            with no_grad():
                arr[i] = orig + h
                fp = float(fn(*[Tensor(a) for a in arrays]).data)
                arr[i] = orig - h
                fm = float(fn(*[Tensor(a) for a in arrays]).data)
            arr[i] = orig
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(fn: Callable, arrays: Sequence[np.ndarray]):
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    return [np.zeros_like(a) if t.grad is None else t.grad for a, t in zip(arrays, leaves)]


def grad_check(fn: Callable, *point, h: float = 1e-5, floor: float = FLOOR) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` maps tensors to a scalar tensor. The error of each input is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)``;
    the largest over inputs is returned. Inputs should be float64.
    """
    arrays = [np.array(p, dtype=np.float64) for p in point]
    ana = analytic_grad(fn, arrays)
    num = numeric_grad(fn, arrays, h)
    worst = 0.0
    for a, n in zip(ana, num):
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0) / scale))
    return worst


def grad_check_params(loss_fn: Callable[[], Tensor], params, h: float = 1e-5, max_entries: int = 40,
                      rng=None, floor: float = FLOOR, rel_floor: float = REL_FLOOR) -> float:
    """Same check over (a random subset of) module parameters, in place.

    The denominator of each tensor is at least ``rel_floor`` times the largest
    analytic gradient entry over all ``params``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    top = max((np.abs(p.grad).max(initial=0.0) for p in params if p.grad is not None), default=0.0)
    floor = max(floor, rel_floor * top)
    worst = 0.0
    for p in params:
        ana = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        num = np.zeros(len(picks))
        for j, i in enumerate(picks):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                fp = float(loss_fn().data)
                flat[i] = orig - h
                fm = float(loss_fn().data)
            flat[i] = orig
            num[j] = (fp - fm) / (2 * h)
        a = ana.reshape(-1)[picks]
        scale = max(np.abs(a).max(initial=0.0), np.abs(num).max(initial=0.0), floor)
        worst = max(worst, float(np.abs(a - num).max(initial=0.0) / scale))
    for p in params:
        p.grad = None
    return worst
