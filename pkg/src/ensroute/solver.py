"""Driving policies through the environment: multi-start rollouts and solving."""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import env as E
from .ensemble import EnsemblePolicy, Gate, select_action
from .global_policy import GlobalConfig, GlobalPolicy
from .instances import DistanceMode, Instance, Kind
from .io_formats import normalize_coords
from .kernels import cyclic_lengths
from .local_policy import LocalConfig, LocalPolicy
from .nn import autograd as ag
from .nn.checkpoint import Checkpoint


@dataclass
class RolloutResult:
    tours: np.ndarray  # (B, P, T)
    lengths: np.ndarray  # (B, P) on the coordinates the policy saw
    log_prob: Optional[ag.Tensor]  # (B, P) summed over decisions
    state: E.ConstructionState


def rollout(policy: EnsemblePolicy, instances: Sequence[Instance], starts=None, mode="greedy",
            rng=None, track_grad=False, depot_first=True, max_rollouts=None, actions=None) -> RolloutResult:
    """Run one trajectory per start node on each instance (all of equal size).

    Forced moves (the start node and idling after completion) do not
    contribute to the log-probability. ``actions`` replays a recorded
    decision sequence instead of selecting.
    """
    instances = list(instances)
    if starts is None:
        row = E.default_starts(instances[0], max_rollouts)
        starts = np.broadcast_to(row, (len(instances), len(row)))
    ctx = ag.no_grad() if not track_grad else contextlib.nullcontext()
    with ctx:
        state = E.reset(instances, starts, depot_first=depot_first)
        enc, feats = policy.prepare(instances)
        total = None
        decision = 0
        while not state.all_done:
            mask = E.action_mask(state)
            dist, is_log = policy.distribution(state, enc, feats, mask)
            probs = np.exp(dist.data) if is_log else dist.data
            if actions is not None:
                action = np.asarray(actions[decision])
            else:
                action = select_action(probs, mode, rng)
            if track_grad:
                lp = ag.take_last(dist, action)
                if not is_log:
                    lp = ag.log(lp)
                live = (~state.done).astype(lp.dtype)
                lp = lp * live
                total = lp if total is None else total + lp
            state = E.step(state, action, mask)
            decision += 1
    tours = E.final_tours(state)
    lengths = E.batch_tour_lengths(state)
    return RolloutResult(tours, lengths, total, state)


def recorded_actions(res: RolloutResult) -> List[np.ndarray]:
    """The decisions of a finished rollout, in the form ``rollout(actions=...)`` replays."""
    st = res.state
    n_init = 2 if st.kind is Kind.CVRP and st.depot_first else 1
    return [np.asarray(a) for a in st.tour[n_init:]]


@dataclass
class SolveResult:
    solution: E.Solution
    n_rollouts: int
    wall_time: float


def solve(policy: EnsemblePolicy, inst: Instance, n_rollouts: Optional[int] = None,
          normalize=True, depot_first=True) -> SolveResult:
    """Greedy multi-start inference; the best rollout measured on the original instance."""
    t0 = time.perf_counter()
    work = normalize_coords(inst)[0] if normalize else inst
    res = rollout(policy, [work], mode="greedy", depot_first=depot_first, max_rollouts=n_rollouts)
    rounded = inst.distance_mode is DistanceMode.ROUNDED_INT
    costs = cyclic_lengths(inst.coords[None], res.tours, rounded)[0]
    best = int(np.argmin(costs))
    tour = E.trim_tour(inst, res.tours[0, best])
    cost = E.tour_length(inst, tour)
    return SolveResult(E.Solution(tour, cost), res.tours.shape[1], time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Construction and (de)serialization
# ---------------------------------------------------------------------------

def make_policy(kind, preset="desk", local_ks=(100,), local_hidden=512, penalty=-1.0, clip=50.0,
                aggregation="sum", use_global=True, glimpse=True, seed=0, dtype="float32",
                local_mode="on", global_overrides=None) -> EnsemblePolicy:
    kind = Kind(kind)
    rng = np.random.default_rng(seed)
    dt = np.dtype(dtype)
    gcfg = GlobalConfig.preset(preset)
    if global_overrides:
        gcfg = GlobalConfig(**{**gcfg.to_dict(), **global_overrides})
    if not glimpse:
        gcfg = GlobalConfig(**{**gcfg.to_dict(), "glimpse": False})
    gp = GlobalPolicy(kind, gcfg, rng, dt) if use_global else None
    lps = [LocalPolicy(kind, LocalConfig(k, local_hidden, penalty), rng, dt) for k in local_ks]
    gate = Gate(gcfg.embed_dim, rng, dt) if aggregation == "moe" else None
    return EnsemblePolicy(gp, lps, clip=clip, aggregation=aggregation, gate=gate, local_mode=local_mode)


def policy_spec(policy: EnsemblePolicy) -> dict:
    g = policy.global_policy
    return {
        "kind": policy.kind.value,
        "global": None if g is None else g.cfg.to_dict(),
        "local": [lp.cfg.to_dict() for lp in policy.local_policies],
        "clip": policy.clip,
        "aggregation": policy.aggregation,
        "local_mode": policy.local_mode,
        "dtype": policy.dtype.name,
    }


def policy_from_spec(spec: dict) -> EnsemblePolicy:
    kind = Kind(spec["kind"])
    dt = np.dtype(spec["dtype"])
    rng = np.random.default_rng(0)
    gp = GlobalPolicy(kind, GlobalConfig(**spec["global"]), rng, dt) if spec["global"] else None
    lps = [LocalPolicy(kind, LocalConfig(**c), rng, dt) for c in spec["local"]]
    gate = Gate(gp.cfg.embed_dim, rng, dt) if spec["aggregation"] == "moe" else None
    return EnsemblePolicy(gp, lps, clip=spec["clip"], aggregation=spec["aggregation"], gate=gate,
                          local_mode=spec.get("local_mode", "on"))


def policy_to_checkpoint(policy: EnsemblePolicy, config=None, meta=None, rng_state=None,
                         extra_arrays=None) -> Checkpoint:
    arrays = {k: v for k, v in policy.state_dict().items()}
    if extra_arrays:
        arrays.update(extra_arrays)
    m = {"policy": policy_spec(policy)}
    for lp in policy.local_policies:
        m.setdefault("local_meta", []).append({"k": lp.cfg.k, "penalty": lp.cfg.penalty})
    if meta:
        m.update(meta)
    return Checkpoint(arrays=arrays, precision=policy.dtype.name, config=config or {}, meta=m,
                      rng_state=rng_state)


def policy_from_checkpoint(ckpt: Checkpoint) -> EnsemblePolicy:
    policy = policy_from_spec(ckpt.meta["policy"])
    own = {k for k, _ in policy.named_parameters()}
    policy.load_state_dict({k: v for k, v in ckpt.arrays.items() if k in own})
    return policy
