"""Construction MDP for TSP and CVRP.

A :class:`ConstructionState` carries ``P`` rollouts over each of ``B``
same-sized instances. All arrays are indexed ``[b, p, ...]``; a single rollout
is simply ``B == P == 1``. States are treated as values: :func:`step` returns
a new state.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Sequence

import numpy as np

from . import kernels
from .instances import DistanceMode, Instance, Kind

MAX_ROLLOUTS = 1000


class InvalidActionError(ValueError):
    pass


@dataclass
class ConstructionState:
    kind: Kind
    coords: np.ndarray  # (B, n, 2)
    demands: np.ndarray  # (B, n), zeros for TSP
    capacity: np.ndarray  # (B,)
    visited: np.ndarray  # (B, P, n) bool
    current: np.ndarray  # (B, P)
    first: np.ndarray  # (B, P)
    load: np.ndarray  # (B, P) remaining capacity
    tour: List[np.ndarray] = field(default_factory=list)  # t arrays of shape (B, P)
    done: np.ndarray = None  # (B, P) bool
    t: int = 0
    depot_first: bool = True

    @property
    def batch_shape(self):
        return self.current.shape

    @property
    def n_nodes(self):
        return self.coords.shape[1]

    @property
    def partial_tour(self) -> np.ndarray:
        return np.stack(self.tour, axis=-1)

    @property
    def all_done(self) -> bool:
        return bool(self.done.all())

    def copy(self) -> "ConstructionState":
        return replace(
            self,
            visited=self.visited.copy(),
            current=self.current.copy(),
            first=self.first.copy(),
            load=self.load.copy(),
            tour=list(self.tour),
            done=self.done.copy(),
        )


def rollout_count(n_customers: int) -> int:
    return n_customers if n_customers <= MAX_ROLLOUTS else MAX_ROLLOUTS


def default_starts(inst: Instance, count=None) -> np.ndarray:
    """One start per customer, or an evenly spaced subset when capped."""
    cust = inst.customers
    count = rollout_count(len(cust)) if count is None else min(count, len(cust))
    if count == len(cust):
        return cust.copy()
    pick = np.unique(np.round(np.linspace(0, len(cust) - 1, count)).astype(np.int64))
    return cust[pick]


def _stack(instances: Sequence[Instance]):
    kind = instances[0].kind
    n = instances[0].n_nodes
    for inst in instances:
        if inst.kind is not kind or inst.n_nodes != n:
            raise ValueError("batched instances must share kind and size")
    coords = np.stack([i.coords for i in instances])
    if kind is Kind.CVRP:
        demands = np.stack([i.demands for i in instances]).astype(np.float64)
        cap = np.array([i.capacity for i in instances], dtype=np.float64)
    else:
        demands = np.zeros((len(instances), n))
        cap = np.ones(len(instances))
    return kind, coords, demands, cap


def reset(instances, start_nodes, depot_first: bool = True) -> ConstructionState:
    """Begin one rollout per start node.

    ``instances`` is one instance or a list; ``start_nodes`` is then a
    sequence of distinct customers or a ``(B, P)`` array.
    """
    if isinstance(instances, Instance):
        instances = [instances]
    kind, coords, demands, cap = _stack(instances)
    B, n = coords.shape[:2]
    starts = np.asarray(start_nodes, dtype=np.int64)
    if starts.ndim == 1:
        starts = np.broadcast_to(starts, (B, len(starts))).copy()
    P = starts.shape[1]
    for row in starts:
        if len(np.unique(row)) != P:
            raise ValueError("start nodes must be distinct")
    if np.any(starts < 0) or np.any(starts >= n):
        raise ValueError("start node out of range")
    if kind is Kind.CVRP and np.any(starts == 0):
        raise ValueError("start nodes must be customers, not the depot")
    n_cust = n - 1 if kind is Kind.CVRP else n
    if P > n_cust:
        raise ValueError("more start nodes than customers")

    b_idx = np.arange(B)[:, None]
    p_idx = np.arange(P)[None, :]
    visited = np.zeros((B, P, n), dtype=bool)
    visited[b_idx, p_idx, starts] = True
    load = np.repeat(cap[:, None], P, axis=1) - demands[b_idx, starts]
    tour = []
    if kind is Kind.CVRP and depot_first:
        tour.append(np.zeros((B, P), dtype=np.int64))
    tour.append(starts.copy())
    state = ConstructionState(
        kind=kind, coords=coords, demands=demands, capacity=cap, visited=visited,
        current=starts.copy(), first=starts.copy(), load=load, tour=tour,
        done=np.zeros((B, P), dtype=bool), t=len(tour), depot_first=depot_first,
    )
    state.done = _finished(state)
    return state


def _finished(state: ConstructionState) -> np.ndarray:
    if state.kind is Kind.TSP:
        return state.visited.all(axis=-1)
    return state.visited[..., 1:].all(axis=-1) & (state.current == 0)


def action_mask(state: ConstructionState) -> np.ndarray:
    """Boolean ``(B, P, n)`` array, ``True`` where the action is valid."""
    valid = ~state.visited
    if state.kind is Kind.TSP:
        return valid
    valid[..., 0] = state.current != 0
    fits = state.demands[:, None, :] <= state.load[..., None] + 1e-9
    valid[..., 1:] &= fits[..., 1:]
    # finished rollouts idle at the depot
    valid[state.done] = False
    valid[..., 0] |= state.done
    return valid


def step(state: ConstructionState, action, mask=None) -> ConstructionState:
    action = np.asarray(action, dtype=np.int64).reshape(state.batch_shape)
    if mask is None:
        mask = action_mask(state)
    b_idx = np.arange(action.shape[0])[:, None]
    p_idx = np.arange(action.shape[1])[None, :]
    if not np.all(mask[b_idx, p_idx, action]):
        bad = np.argwhere(~mask[b_idx, p_idx, action])[0]
        raise InvalidActionError(f"masked action {action[tuple(bad)]} at rollout {tuple(bad)}")
    new = state.copy()
    new.visited[b_idx, p_idx, action] = True
    new.current = action
    if state.kind is Kind.CVRP:
        at_depot = action == 0
        new.load = np.where(at_depot, state.capacity[:, None],
                            state.load - state.demands[b_idx, action])
        new.visited[..., 0] = False
    new.tour.append(action)
    new.t = state.t + 1
    new.done = _finished(new)
    return new


def final_tours(state: ConstructionState) -> np.ndarray:
    """Complete tours ``(B, P, T)``; CVRP tours open and close at the depot."""
    seq = state.partial_tour
    if state.kind is Kind.CVRP:
        B, P, _ = seq.shape
        z = np.zeros((B, P, 1), dtype=np.int64)
        if not state.depot_first:
            seq = np.concatenate([z, seq], axis=-1)
        if not np.all(seq[..., -1] == 0):
            seq = np.concatenate([seq, z], axis=-1)
    return seq


def batch_tour_lengths(state: ConstructionState, rounded: bool = False) -> np.ndarray:
    return kernels.cyclic_lengths(state.coords, final_tours(state), rounded)


def trim_tour(inst: Instance, tour) -> List[int]:
    """Drop idle depot padding from a rollout tour."""
    tour = [int(v) for v in tour]
    if inst.kind is Kind.TSP:
        return tour
    out = []
    for v in tour:
        if v == 0 and out and out[-1] == 0:
            continue
        out.append(v)
    return out


# ---------------------------------------------------------------------------
# Single-solution utilities
# ---------------------------------------------------------------------------

@dataclass
class FeasibilityReport:
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


@dataclass
class Solution:
    tour: List[int]
    objective: float

    @property
    def reward(self) -> float:
        return -self.objective


def _canonical(inst: Instance, tour) -> np.ndarray:
    seq = np.asarray(list(tour), dtype=np.int64)
    if inst.kind is Kind.CVRP:
        if seq.size == 0 or seq[0] != 0:
            seq = np.concatenate(([0], seq))
        if seq[-1] != 0:
            seq = np.concatenate((seq, [0]))
    return seq


def feasibility_check(inst: Instance, tour) -> FeasibilityReport:
    rep = FeasibilityReport()
    seq = [int(v) for v in tour]
    n = inst.n_nodes
    out_of_range = [v for v in seq if v < 0 or v >= n]
    if out_of_range:
        rep.violations.append(f"out of range: {out_of_range[0]}")
        return rep
    counts = np.bincount(np.asarray(seq, dtype=np.int64), minlength=n) if seq else np.zeros(n, int)
    cust = inst.customers
    dup = [int(c) for c in cust if counts[c] > 1]
    unc = [int(c) for c in cust if counts[c] == 0]
    for c in dup:
        rep.violations.append(f"duplicate: {c}")
    for c in unc:
        rep.violations.append(f"uncovered: {c}")
    if inst.kind is Kind.CVRP:
        canon = _canonical(inst, seq)
        k, load = 0, 0
        for prev, v in zip(canon[:-1], canon[1:]):
            if v == 0:
                k += 1
                if prev == 0:
                    rep.violations.append(f"empty route: {k}")
                elif load > inst.capacity:
                    rep.violations.append(f"capacity: route {k} demand {load} > {inst.capacity}")
                load = 0
            else:
                load += int(inst.demands[v])
    return rep


def tour_length(inst: Instance, tour) -> float:
    rep = feasibility_check(inst, tour)
    if not rep.ok:
        raise InvalidActionError(f"infeasible tour: {rep.violations[0]}")
    seq = _canonical(inst, tour)
    rounded = inst.distance_mode is DistanceMode.ROUNDED_INT
    return float(kernels.cyclic_lengths(inst.coords[None], seq[None, None], rounded)[0, 0])
