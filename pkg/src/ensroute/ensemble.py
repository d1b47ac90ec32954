"""Combining global and local scores into one action distribution."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .env import ConstructionState
from .global_policy import GlobalPolicy
from .instances import Instance, Kind
from .local_policy import LocalPolicy, instance_features
from .nn import autograd as ag
from .nn.layers import Linear, Module

DEFAULT_CLIP = 50.0


class NoValidActionError(ValueError):
    pass


@dataclass
class ScoreVector:
    u_global: Optional[np.ndarray]
    u_local: Optional[np.ndarray]
    u_ens: np.ndarray
    u_masked: np.ndarray
    pi: np.ndarray


def ensemble_scores(u_global, u_local):
    if u_global.shape != u_local.shape:
        raise ValueError(f"score shapes differ: {u_global.shape} vs {u_local.shape}")
    if isinstance(u_global, ag.Tensor) or isinstance(u_local, ag.Tensor):
        return ag.add(u_global, u_local)
    return np.asarray(u_global) + np.asarray(u_local)


def masked_scores(u, mask, clip=DEFAULT_CLIP):
    """``clip * tanh(u)`` on valid entries, ``-inf`` elsewhere (plain arrays)."""
    mask = np.asarray(mask, dtype=bool)
    return np.where(mask, clip * np.tanh(np.asarray(u)), -np.inf)


def action_distribution(u_ens, mask, clip=DEFAULT_CLIP, log=False):
    """Clip, mask and softmax. Accepts arrays or tensors; returns the same kind."""
    mask = np.asarray(mask, dtype=bool)
    if not np.all(mask.any(axis=-1)):
        raise NoValidActionError("no valid action in at least one state")
    is_tensor = isinstance(u_ens, ag.Tensor)
    u = u_ens if is_tensor else ag.Tensor(np.asarray(u_ens, dtype=np.float64))
    clipped = ag.tanh(u) * clip
    out = ag.masked_log_softmax(clipped, mask) if log else ag.masked_softmax(clipped, mask)
    return out if is_tensor else out.data


def score_vector(u_global, u_local, mask, clip=DEFAULT_CLIP) -> ScoreVector:
    u_ens = ensemble_scores(np.asarray(u_global), np.asarray(u_local))
    return ScoreVector(np.asarray(u_global), np.asarray(u_local), u_ens,
                       masked_scores(u_ens, mask, clip), action_distribution(u_ens, mask, clip))


def select_action(pi, mode="greedy", rng=None):
    """Greedy takes the argmax (lowest index on ties); sample draws from ``pi``."""
    pi = np.asarray(pi)
    if mode == "greedy":
        return np.argmax(pi, axis=-1)
    if mode != "sample":
        raise ValueError(f"unknown selection mode {mode!r}")
    cdf = np.cumsum(pi, axis=-1)
    u = rng.random(pi.shape[:-1]) * cdf[..., -1]
    return np.argmax(cdf > u[..., None], axis=-1)


class Gate(Module):
    """Sigmoid of one affine layer over the decoder query."""

    def __init__(self, d, rng, dtype=np.float32):
        self.fc = Linear(d, 1, rng, dtype=dtype)

    def forward(self, q):
        return ag.sigmoid(self.fc(q))


def moe_gate_distribution(pi_global, pi_local, q=None, gate: Gate = None, omega=None):
    """``omega * pi_global + (1 - omega) * pi_local`` with ``omega = gate(q)``."""
    if omega is None:
        omega = gate(ag.as_tensor(q))
    if isinstance(omega, ag.Tensor) or isinstance(pi_global, ag.Tensor):
        pg, pl, w = ag.as_tensor(pi_global), ag.as_tensor(pi_local), ag.as_tensor(omega)
        return ag.add(ag.mul(pg, w), ag.mul(pl, ag.sub(1.0, w)))
    w = np.asarray(omega)
    return w * np.asarray(pi_global) + (1.0 - w) * np.asarray(pi_local)


class EnsemblePolicy(Module):
    """Global policy plus zero or more local policies.

    ``aggregation="sum"`` adds global scores and the mean local score before
    clipping (joint training). ``"moe"`` mixes the two separately softmaxed
    distributions with a learned gate. ``local_mode="zero"`` replaces the local
    scores by zeros.
    """

    def __init__(self, global_policy: Optional[GlobalPolicy], local_policies: List[LocalPolicy] = (),
                 clip=DEFAULT_CLIP, aggregation="sum", gate: Optional[Gate] = None, local_mode="on"):
        if global_policy is None and not local_policies:
            raise ValueError("need at least one base policy")
        if aggregation not in ("sum", "moe"):
            raise ValueError(f"unknown aggregation {aggregation!r}")
        if aggregation == "moe" and (gate is None or global_policy is None or len(local_policies) != 1):
            raise ValueError("moe aggregation needs a gate, a global and exactly one local policy")
        self.global_policy = global_policy
        self.local_policies = list(local_policies)
        self.gate = gate
        self.clip = clip
        self.aggregation = aggregation
        self.local_mode = local_mode
        base = global_policy if global_policy is not None else local_policies[0]
        self.kind = base.kind
        self.dtype = base.dtype

    def named_parameters(self, prefix=""):
        # checkpoint namespaces: "global", "local.<i>", "gate"
        if self.global_policy is not None:
            yield from self.global_policy.named_parameters("global")
        for i, lp in enumerate(self.local_policies):
            yield from lp.named_parameters(f"local.{i}")
        if self.gate is not None:
            yield from self.gate.named_parameters("gate")

    # -- per-instance preparation -------------------------------------------
    def prepare(self, instances: List[Instance]):
        coords = np.stack([i.coords for i in instances])
        enc = None
        if self.global_policy is not None:
            frac = None
            if self.kind is Kind.CVRP:
                frac = np.stack([i.demands / i.capacity for i in instances])
            enc = self.global_policy.encode(coords, frac)
        feats = np.stack([instance_features(i) for i in instances])
        return enc, feats

    # -- scoring ------------------------------------------------------------
    def _local(self, state, feats):
        if self.local_mode == "zero":
            return ag.Tensor(np.zeros(state.visited.shape, dtype=self.dtype))
        scores = [lp.local_scores(state, feats) for lp in self.local_policies]
        u = scores[0]
        for s in scores[1:]:
            u = u + s
        return u * (1.0 / len(scores)) if len(scores) > 1 else u

    def distribution(self, state: ConstructionState, enc, feats, mask):
        """Return ``(dist, is_log)``: log-probabilities for sum aggregation, probabilities for MoE."""
        u_g = q = None
        if self.global_policy is not None:
            q = self.global_policy.build_query(state, enc)
            u_g, q = self.global_policy.global_scores(q, enc, mask)
        if not self.local_policies and self.local_mode != "zero":
            return action_distribution(u_g, mask, self.clip, log=True), True
        u_l = self._local(state, feats)
        if self.aggregation == "sum":
            u = u_l if u_g is None else ensemble_scores(u_g, u_l)
            return action_distribution(u, mask, self.clip, log=True), True
        pi_g = action_distribution(u_g, mask, self.clip)
        pi_l = action_distribution(u_l, mask, self.clip)
        return moe_gate_distribution(pi_g, pi_l, q, self.gate), False

    def config_dict(self):
        return {
            "clip": self.clip,
            "aggregation": self.aggregation,
            "local_mode": self.local_mode,
            "global": None if self.global_policy is None else self.global_policy.config_dict(),
            "local": [lp.config_dict() for lp in self.local_policies],
        }
