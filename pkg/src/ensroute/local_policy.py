"""Scorer over the K nearest neighbours of the current node, in polar form.

Features depend only on distances and angles relative to the current node,
normalized by the farthest neighbour, so the scores do not change when the
instance is translated or uniformly rescaled.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .env import ConstructionState
from .instances import Instance, Kind, expected_route_size
from .nn import autograd as ag
from .nn.layers import MLP, Module


class DegenerateNeighborhoodError(ValueError):
    pass


@dataclass(frozen=True)
class LocalConfig:
    k: int = 100
    hidden: int = 512
    penalty: float = -1.0

    def to_dict(self):
        return asdict(self)


@dataclass
class LocalFeatures:
    neighbors: np.ndarray  # node indices, nearest first
    rho: np.ndarray
    theta: np.ndarray
    instance_features: np.ndarray


def instance_features(inst: Instance) -> np.ndarray:
    """``(N/1000,)`` for TSP, ``(N/1000, r/25)`` for CVRP."""
    n = inst.n_customers / 1000.0
    if inst.kind is Kind.TSP:
        return np.array([n])
    return np.array([n, expected_route_size(inst) / 25.0])


def n_instance_features(kind) -> int:
    return 1 if Kind(kind) is Kind.TSP else 2


def candidate_mask(state: ConstructionState) -> np.ndarray:
    """Unvisited customers plus the depot, never the current node."""
    cand = ~state.visited
    if state.kind is Kind.CVRP:
        cand[..., 0] = True
    b = np.arange(cand.shape[0])[:, None]
    p = np.arange(cand.shape[1])[None, :]
    cand[b, p, state.current] = False
    cand[state.done] = False
    return cand


def knn_neighbors(state: ConstructionState, k: int):
    """Neighbour indices (B, P, k), ``-1`` where fewer than ``k`` candidates remain."""
    idx, _, _ = kernels.knn_polar(state.coords, state.current, candidate_mask(state), k)
    return idx


def polar_features(current: int, neighbors: Sequence[int], inst: Instance) -> LocalFeatures:
    """Polar features of ``neighbors`` about ``current`` for one instance."""
    nb = np.asarray(neighbors, dtype=np.int64)
    if nb.size == 0:
        raise ValueError("need at least one neighbour")
    delta = inst.coords[nb] - inst.coords[current]
    dist = np.sqrt(delta[:, 0] * delta[:, 0] + delta[:, 1] * delta[:, 1])
    d_max = dist.max()
    if not d_max > 0.0:
        raise DegenerateNeighborhoodError("all neighbours coincide with the current node")
    order = np.argsort(dist, kind="stable")
    return LocalFeatures(
        neighbors=nb[order],
        rho=dist[order] / d_max,
        theta=np.arctan2(delta[order, 1], delta[order, 0]),
        instance_features=instance_features(inst),
    )


class LocalPolicy(Module):
    def __init__(self, kind, cfg: LocalConfig = LocalConfig(), rng=None, dtype=np.float32):
        if cfg.k < 1:
            raise ValueError("K must be at least 1")
        rng = np.random.default_rng(0) if rng is None else rng
        self.kind = Kind(kind)
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        n_in = 2 * cfg.k + n_instance_features(kind)
        self.mlp = MLP([n_in, cfg.hidden, cfg.k], rng, dtype)

    def zero_(self):
        for p in self.parameters():
            p.data[...] = 0

    def features(self, state: ConstructionState, inst_feats: np.ndarray):
        """MLP input (B, P, 2K + F), neighbour indices and rho, all at model precision."""
        idx, rho, theta = kernels.knn_polar(state.coords, state.current, candidate_mask(state), self.cfg.k)
        rho = rho.astype(self.dtype)
        theta = theta.astype(self.dtype)
        B, P, K = idx.shape
        polar = np.stack([rho, theta], axis=-1).reshape(B, P, 2 * K)
        inst = np.broadcast_to(np.asarray(inst_feats, dtype=self.dtype)[:, None, :], (B, P, inst_feats.shape[-1]))
        x = np.concatenate([polar, inst], axis=-1)
        return x, idx, rho

    def local_scores(self, state: ConstructionState, inst_feats: np.ndarray):
        """Scores (B, P, n): MLP slot ``i`` minus rho for neighbour ``i``, penalty elsewhere."""
        x, idx, rho = self.features(state, inst_feats)
        out = self.mlp(ag.Tensor(x)) - ag.Tensor(rho)
        return ag.scatter_last(out, idx, state.n_nodes, self.cfg.penalty)

    def config_dict(self):
        return {"kind": self.kind.value, **self.cfg.to_dict()}
