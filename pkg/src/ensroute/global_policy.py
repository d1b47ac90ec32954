"""Attention encoder-decoder scoring every node from whole-instance embeddings."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .env import ConstructionState
from .instances import Kind
from .nn import autograd as ag
from .nn.layers import MLP, InstanceNorm, Linear, Module, MultiHeadAttention, multi_head_attention


@dataclass(frozen=True)
class GlobalConfig:
    embed_dim: int = 128
    n_layers: int = 6
    n_heads: int = 8
    ff_hidden: int = 512
    glimpse: bool = True

    @classmethod
    def preset(cls, name: str) -> "GlobalConfig":
        if name == "desk":
            return cls()
        if name == "tiny":
            return cls(embed_dim=32, n_layers=2, n_heads=4, ff_hidden=64)
        raise ValueError(f"unknown preset {name!r}")

    def to_dict(self):
        return asdict(self)


class EncoderLayer(Module):
    def __init__(self, cfg: GlobalConfig, rng, dtype):
        self.attn = MultiHeadAttention(cfg.embed_dim, cfg.n_heads, rng, dtype)
        self.norm1 = InstanceNorm(cfg.embed_dim, dtype)
        self.ff = MLP([cfg.embed_dim, cfg.ff_hidden, cfg.embed_dim], rng, dtype)
        self.norm2 = InstanceNorm(cfg.embed_dim, dtype)

    def forward(self, h):
        h = self.norm1(h + self.attn(h))
        return self.norm2(h + self.ff(h))


@dataclass
class Encodings:
    embeddings: ag.Tensor  # (B, n, d)
    glimpse_k: Optional[ag.Tensor]  # (B, n, d)
    glimpse_v: Optional[ag.Tensor]
    logit_k: ag.Tensor  # (B, d, n)


class GlobalPolicy(Module):
    def __init__(self, kind, cfg: GlobalConfig = GlobalConfig(), rng=None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.kind = Kind(kind)
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        d = cfg.embed_dim
        if d % cfg.n_heads:
            raise ValueError("embedding dim must be divisible by the head count")
        if self.kind is Kind.CVRP:
            self.depot_embed = Linear(2, d, rng, dtype=dtype)
            self.node_embed = Linear(3, d, rng, dtype=dtype)
            self.query = Linear(d + 1, d, rng, bias=False, dtype=dtype)
        else:
            self.node_embed = Linear(2, d, rng, dtype=dtype)
            self.query = Linear(2 * d, d, rng, bias=False, dtype=dtype)
        self.layers = [EncoderLayer(cfg, rng, dtype) for _ in range(cfg.n_layers)]
        self.wk = Linear(d, d, rng, bias=False, dtype=dtype)
        self.wv = Linear(d, d, rng, bias=False, dtype=dtype)
        self.combine = Linear(d, d, rng, dtype=dtype)

    def input_features(self, coords, demand_frac=None):
        """Tensors fed to the node projections: ``(x, y)`` and, for CVRP, ``d/Q``."""
        xy = np.asarray(coords, dtype=self.dtype)
        if self.kind is Kind.TSP:
            return ag.Tensor(xy), None
        feats = np.concatenate([xy[:, 1:], np.asarray(demand_frac, dtype=self.dtype)[:, 1:, None]], axis=-1)
        return ag.Tensor(xy[:, :1]), ag.Tensor(feats)

    def embed(self, depot_in, cust_in):
        if self.kind is Kind.TSP:
            return self.node_embed(depot_in)
        return ag.concat([self.depot_embed(depot_in), self.node_embed(cust_in)], axis=1)

    def encode_inputs(self, depot_in, cust_in) -> Encodings:
        h = self.embed(depot_in, cust_in)
        for layer in self.layers:
            h = layer(h)
        return self.encodings_from(h)

    def encodings_from(self, h) -> Encodings:
        gk = self.wk(h) if self.cfg.glimpse else None
        gv = self.wv(h) if self.cfg.glimpse else None
        return Encodings(h, gk, gv, ag.transpose(h, (0, 2, 1)))

    def encode(self, coords, demand_frac=None) -> Encodings:
        """Embeddings of every node; ``coords`` is (B, n, 2) in the unit square."""
        coords = np.asarray(coords)
        if coords.ndim == 2:
            coords = coords[None]
            if demand_frac is not None:
                demand_frac = np.asarray(demand_frac)[None]
        return self.encode_inputs(*self.input_features(coords, demand_frac))

    def build_query(self, state: ConstructionState, enc: Encodings):
        cur = ag.gather_rows(enc.embeddings, state.current)
        if self.kind is Kind.CVRP:
            frac = (state.load / state.capacity[:, None]).astype(self.dtype)[..., None]
            ctx = ag.concat([cur, ag.Tensor(frac)], axis=-1)
        else:
            ctx = ag.concat([cur, ag.gather_rows(enc.embeddings, state.first)], axis=-1)
        return self.query(ctx)

    def global_scores(self, q, enc: Encodings, mask=None):
        """Raw compatibility scores (B, P, n) and the refined query (B, P, d).

        With the glimpse enabled, one masked multi-head attention over the
        node keys refines the query first. Scores are neither clipped nor masked.
        """
        if self.cfg.glimpse:
            att = multi_head_attention(q, enc.glimpse_k, enc.glimpse_v, self.cfg.n_heads, mask)
            q = self.combine(att)
        scale = 1.0 / math.sqrt(self.cfg.embed_dim)
        return ag.matmul(q, enc.logit_k) * scale, q

    def config_dict(self):
        return {"kind": self.kind.value, **self.cfg.to_dict()}
