"""Quick runtime diagnostics: gradient checks and small oracle comparisons."""
from __future__ import annotations

import itertools
from typing import Callable, List, Tuple

import numpy as np

from . import ensemble as ens
from .bench import wilcoxon_one_sided
from .instances import GenConfig, Kind, ScaleSampler, gen_batch
from .nn import autograd as ag
from .nn.gradcheck import grad_check, grad_check_params
from .nn.layers import MLP, MultiHeadAttention
from .solver import make_policy, recorded_actions, rollout
from .trainer import policy_loss, rs_weights

TOL = 1e-4
_H = 1e-5


def _sq(t):
    return (t * t).sum()


def _op_checks(rng) -> List[Tuple[str, Callable[[], float]]]:
    mlp = MLP([6, 9, 4], rng, dtype=np.float64)
    mha = MultiHeadAttention(8, 2, rng, dtype=np.float64)
    x = rng.normal(size=(2, 5, 6))
    h = rng.normal(size=(2, 5, 8))
    w = rng.normal(size=(3, 7))
    mask = rng.random((3, 7)) < 0.7
    mask[:, 0] = True
    u = rng.normal(size=(3, 7)) * 0.8
    pick = np.array([0, 2, 5])
    mask[np.arange(3), pick] = True

    def clip_fn(t):
        return (ag.tanh(t) * ens.DEFAULT_CLIP * ag.Tensor(w)).sum()

    return [
        ("mlp", lambda: grad_check_params(lambda: _sq(mlp(ag.Tensor(x))), mlp.parameters())),
        ("mlp.input", lambda: grad_check(lambda t: _sq(mlp(t)), x)),
        ("attention", lambda: grad_check_params(lambda: (mha(ag.Tensor(h)) * ag.Tensor(h)).sum(),
                                                mha.parameters())),
        ("attention.input", lambda: grad_check(lambda t: _sq(mha(t)), h)),
        ("clip", lambda: grad_check(clip_fn, u)),
        ("masked_softmax", lambda: grad_check(
            lambda t: (ag.masked_softmax(t, mask) * ag.Tensor(w)).sum(), u)),
        ("masked_log_softmax", lambda: grad_check(
            lambda t: ag.take_last(ag.masked_log_softmax(t, mask), pick).sum(), u)),
        ("instance_norm", lambda: grad_check(lambda t: (ag.instance_norm(t) * ag.Tensor(h)).sum(), h)),
    ]


def _composite_loss_check(rng, kind=Kind.TSP, n=8, xi=4) -> float:
    """Risk-seeking loss of replayed trajectories through the whole ensemble, float64."""
    policy = make_policy(kind, preset="tiny", local_ks=(16,), local_hidden=24, seed=int(rng.integers(1 << 30)),
                         dtype="float64")
    insts = gen_batch(GenConfig(ScaleSampler.fixed(n)), kind, rng, 2, n)
    first = rollout(policy, insts, mode="sample", rng=rng)
    acts = recorded_actions(first)
    w = rs_weights(-first.lengths, min(xi, first.lengths.shape[1]))

    def loss():
        res = rollout(policy, insts, track_grad=True, actions=acts)
        return policy_loss(res.log_prob, w, min(xi, first.lengths.shape[1]))

    # the summed log-probabilities are large next to single-parameter effects, so
    # roundoff dominates at h=1e-5; h=1e-4 keeps the truncation error far below tolerance
    return grad_check_params(loss, policy.parameters(), h=_H, max_entries=12, rng=rng)


def _rs_oracle_check(rng, count=500) -> float:
    bad = 0
    for _ in range(count):
        p = int(rng.integers(1, 9))
        r = np.round(rng.normal(size=p), 1)
        xi = int(rng.integers(1, p + 1))
        ref = np.zeros(p)
        ranked = sorted(range(p), key=lambda i: (-r[i], i))[:xi]
        base = r[ranked[-1]]
        top = max(r[i] - base for i in ranked)
        for i in ranked:
            ref[i] = (r[i] - base) / top if top > 0 else 0.0
        bad += not np.array_equal(rs_weights(r, xi), ref)
    return float(bad)


def _wilcoxon_check(rng, count=50) -> float:
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(1, 9))
        a, b = rng.integers(0, 6, size=n).astype(float), rng.integers(0, 6, size=n).astype(float)
        d = a - b
        d = d[d != 0]
        if len(d) == 0:
            continue
        res = wilcoxon_one_sided(a, b)
        ranks = _ranks(np.abs(d))
        obs = ranks[d > 0].sum()
        hits = sum(1 for signs in itertools.product((0, 1), repeat=len(d))
                   if np.dot(signs, ranks) >= obs - 1e-9)
        worst = max(worst, abs(res.p_value - hits / 2 ** len(d)))
    return worst


def _ranks(x):
    return np.array([np.sum(x < v) + (np.sum(x == v) + 1) / 2.0 for v in x])


def run(seed: int = 0, log=print) -> bool:
    rng = np.random.default_rng(seed)
    checks = _op_checks(rng)
    checks.append(("ensemble.composite+rs_loss", lambda: _composite_loss_check(rng)))
    ok = True
    for name, fn in checks:
        err = fn()
        good = err < TOL
        ok &= good
        log(f"{'PASS' if good else 'FAIL'} grad {name}: max rel err {err:.2e}")
    mism = _rs_oracle_check(rng)
    log(f"{'PASS' if mism == 0 else 'FAIL'} rs_weights vs reference: {int(mism)} mismatches")
    ok &= mism == 0
    werr = _wilcoxon_check(rng)
    log(f"{'PASS' if werr < 1e-12 else 'FAIL'} wilcoxon exact vs enumeration: max |dp| {werr:.1e}")
    ok &= werr < 1e-12
    return bool(ok)
