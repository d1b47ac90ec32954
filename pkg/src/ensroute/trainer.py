"""Joint policy-gradient training of the global and local parameters."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .instances import GenConfig, Instance, Kind, ScaleSampler, batch_size_for, gen_batch, gen_instance
from .nn import autograd as ag
from .nn.checkpoint import Checkpoint, save as save_checkpoint
from .nn.optim import AdamState, NonFiniteGradientError, adam_step
from .solver import make_policy, policy_from_checkpoint, policy_to_checkpoint, rollout

log = logging.getLogger(__name__)

EARLY_STOP_STEPS = 200_000
SECOND_STAGE_STEPS = 50_000


class TrainingDivergedError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# Trajectory weights
# ---------------------------------------------------------------------------

def rs_weights(rewards, xi: int) -> np.ndarray:
    """Risk-seeking weights per trajectory, along the last axis.

    The top ``xi`` trajectories get ``(R_i - R_xi) / max(R_j - R_xi)``; all
    others get 0. Ties are ordered by trajectory index. If the top ``xi``
    rewards are all equal, every weight is 0.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if xi < 1 or xi > r.shape[-1]:
        raise ValueError(f"xi={xi} needs 1 <= xi <= {r.shape[-1]} trajectories")
    order = np.argsort(-r, axis=-1, kind="stable")
    top = order[..., :xi]
    r_top = np.take_along_axis(r, top, axis=-1)
    adv = r_top - r_top[..., xi - 1:xi]
    a_max = adv.max(axis=-1, keepdims=True)
    norm = np.where(a_max > 0, adv / np.where(a_max > 0, a_max, 1.0), 0.0)
    w = np.zeros_like(r)
    np.put_along_axis(w, top, norm, axis=-1)
    return w


def shared_baseline_weights(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[-1] < 2:
        raise ValueError("shared baseline needs at least two trajectories")
    return r - r.mean(axis=-1, keepdims=True)


def policy_loss(log_prob: ag.Tensor, weights: np.ndarray, xi: Optional[int] = None) -> ag.Tensor:
    """``-(1/xi) sum_i w_i log pi(tau_i)`` per instance, averaged over the batch.

    With ``xi=None`` the sum is replaced by a mean over trajectories (shared baseline).
    """
    w = ag.Tensor(np.asarray(weights, dtype=log_prob.dtype))
    per = (log_prob * w).sum(axis=-1)
    denom = float(xi) if xi is not None else float(log_prob.shape[-1])
    return per.mean() * (-1.0 / denom)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    kind: str = "CVRP"
    preset: str = "desk"
    steps: int = 1000
    scale_lo: int = 100
    scale_hi: int = 100
    bs_init: int = 120
    max_batch: int = 0  # 0 = no cap
    max_rollouts: int = 0  # 0 = one rollout per customer
    xi: int = 20
    algorithm: str = "rs"  # rs | shared
    lr: float = 1e-4
    weight_decay: float = 0.0
    seed: int = 1234
    precision: str = "float32"
    local_ks: Tuple[int, ...] = (100,)
    local_hidden: int = 512
    penalty: float = -1.0
    clip: float = 50.0
    use_global: bool = True
    aggregation: str = "sum"  # sum | moe
    train_groups: str = "all"  # all | gate
    val_every: int = 0  # 0 = only at start and end
    val_sizes: Tuple[int, ...] = (100, 500)
    val_count: int = 16
    val_seed: int = 20240101
    val_capacity: Dict[int, int] = field(default_factory=lambda: {20: 30, 50: 40, 100: 50, 200: 80, 500: 100, 1000: 200})
    ckpt_every: int = 0
    depot_first: bool = True

    def __post_init__(self):
        self.local_ks = tuple(int(k) for k in self.local_ks)
        self.val_sizes = tuple(int(n) for n in self.val_sizes)
        self.val_capacity = {int(k): int(v) for k, v in self.val_capacity.items()}
        if self.algorithm not in ("rs", "shared"):
            raise ValueError("algorithm must be 'rs' or 'shared'")
        if self.scale_lo > self.scale_hi or self.scale_lo < 2:
            raise ValueError("bad training scale range")
        if self.xi < 1:
            raise ValueError("xi must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["local_ks"] = list(self.local_ks)
        d["val_sizes"] = list(self.val_sizes)
        d["val_capacity"] = {str(k): v for k, v in self.val_capacity.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def parse_config_text(text: str) -> TrainConfig:
    """``key = value`` lines (an optional ``[train]`` header); ``#`` starts a comment."""
    import configparser

    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    body = text if text.lstrip().startswith("[") else "[train]\n" + text
    cp.read_string(body)
    sec = cp["train"]
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for key, raw in sec.items():
        if key not in types:
            raise ValueError(f"unknown training option {key!r}")
        default = getattr(TrainConfig(), key)
        raw = raw.strip()
        if isinstance(default, bool):
            out[key] = sec.getboolean(key)
        elif isinstance(default, int):
            out[key] = int(raw)
        elif isinstance(default, float):
            out[key] = float(raw)
        elif isinstance(default, tuple):
            out[key] = tuple(int(v) for v in raw.replace(",", " ").split())
        elif isinstance(default, dict):
            pairs = [p.split(":") for p in raw.replace(",", " ").split()]
            out[key] = {int(a): int(b) for a, b in pairs}
        else:
            out[key] = raw
    return TrainConfig(**out)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validation_sets(cfg: TrainConfig) -> Dict[str, List[Instance]]:
    """Uniform instances at each validation size, seeded once; CVRP uses fixed capacities."""
    rng = np.random.default_rng(cfg.val_seed)
    kind = Kind(cfg.kind)
    sets = {}
    for n in cfg.val_sizes:
        insts = []
        for i in range(cfg.val_count):
            if kind is Kind.TSP:
                insts.append(gen_instance(GenConfig(), kind, rng, n=n, name=f"val{n}_{i}"))
            else:
                coords = rng.random((n + 1, 2))
                dem = np.concatenate(([0], rng.integers(1, 10, size=n)))
                cap = cfg.val_capacity.get(n, 50)
                insts.append(Instance(kind, coords, demands=dem, capacity=cap, name=f"val{n}_{i}"))
        sets[f"uniform_n{n}"] = insts
    return sets


def validate(policy, instances: Sequence[Instance], max_rollouts=None, batch=16, depot_first=True) -> float:
    """Mean greedy multi-start cost over ``instances``."""
    costs = []
    insts = list(instances)
    for i in range(0, len(insts), batch):
        chunk = insts[i:i + batch]
        groups: Dict[int, List[Instance]] = {}
        for inst in chunk:
            groups.setdefault(inst.n_nodes, []).append(inst)
        for group in groups.values():
            res = rollout(policy, group, mode="greedy", max_rollouts=max_rollouts or None,
                          depot_first=depot_first)
            costs.extend(res.lengths.min(axis=1).tolist())
    return float(np.mean(costs))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    curve: List[Tuple[int, str, float]]
    losses: List[float]


def _trainable(policy, groups: str):
    named = list(policy.named_parameters())
    if groups == "gate":
        return [(k, p) for k, p in named if k.startswith("gate.")]
    return named


def _adam_arrays(state: AdamState) -> Dict[str, np.ndarray]:
    out = {}
    for k in sorted(state.m):
        out[f"adam.m.{k}"] = state.m[k].copy()
        out[f"adam.v.{k}"] = state.v[k].copy()
    return out


def _adam_from(ckpt: Checkpoint, cfg: TrainConfig) -> AdamState:
    st = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay, step=int(ckpt.meta.get("adam_step", 0)))
    for k, v in ckpt.arrays.items():
        if k.startswith("adam.m."):
            st.m[k[7:]] = v.copy()
        elif k.startswith("adam.v."):
            st.v[k[7:]] = v.copy()
    return st


def train(cfg: TrainConfig, mode: str = "small_scale", init: Optional[Checkpoint] = None,
          curve_path=None, ckpt_dir=None, progress=None) -> TrainResult:
    """Train and return the final checkpoint.

    ``mode="varying_scale"`` continues from ``init`` (required) and samples the
    scale from ``[scale_lo, scale_hi]`` each step.
    """
    if mode not in ("small_scale", "varying_scale"):
        raise ValueError(f"unknown training mode {mode!r}")
    if mode == "varying_scale" and init is None:
        raise ValueError("varying-scale training needs a starting checkpoint")
    kind = Kind(cfg.kind)
    rng = np.random.default_rng(cfg.seed)
    if init is not None:
        policy = policy_from_checkpoint(init)
        start_step = int(init.meta.get("step", 0)) if mode == "small_scale" else 0
        adam = _adam_from(init, cfg) if cfg.train_groups == "all" else AdamState(lr=cfg.lr)
        if init.rng_state is not None and mode == "small_scale":
            rng.bit_generator.state = init.rng_state
    else:
        policy = make_policy(kind, preset=cfg.preset, local_ks=cfg.local_ks, local_hidden=cfg.local_hidden,
                             penalty=cfg.penalty, clip=cfg.clip, aggregation=cfg.aggregation,
                             use_global=cfg.use_global, seed=cfg.seed, dtype=cfg.precision)
        start_step = 0
        adam = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    params = _trainable(policy, cfg.train_groups)
    gen_cfg = GenConfig(scale=ScaleSampler(cfg.scale_lo, cfg.scale_hi), seed=cfg.seed)
    val = validation_sets(cfg) if cfg.val_sizes else {}
    curve: List[Tuple[int, str, float]] = []
    losses: List[float] = []
    max_roll = cfg.max_rollouts or None

    def run_validation(step):
        for name, insts in val.items():
            c = validate(policy, insts, max_rollouts=max_roll, depot_first=cfg.depot_first)
            curve.append((step, name, c))
            log.info("step %d %s mean cost %.5f", step, name, c)
            if curve_path is not None:
                _append_curve(curve_path, step, name, c)

    if curve_path is not None:
        Path(curve_path).write_text("step,val_set,mean_cost\n")
    if cfg.steps > 0:
        run_validation(start_step)

    def make_ckpt(step):
        meta = {
            "step": step,
            "adam_step": adam.step,
            "mode": mode,
            "early_stop_steps": EARLY_STOP_STEPS,
            "second_stage_steps": SECOND_STAGE_STEPS,
            "init": "uniform(+-1/sqrt(fan_in))",
            "kernel_backend": kernels.BACKEND,
        }
        if init is not None and cfg.steps == 0:
            return init
        return policy_to_checkpoint(policy, config=cfg.to_dict(), meta=meta,
                                    rng_state=rng.bit_generator.state, extra_arrays=_adam_arrays(adam))

    step = start_step
    for i in range(cfg.steps):
        step = start_step + i + 1
        n = gen_cfg.scale.sample(rng)
        bs = batch_size_for(n, cfg.bs_init)
        if cfg.max_batch:
            bs = min(bs, cfg.max_batch)
        batch = gen_batch(gen_cfg, kind, rng, bs, n)
        res = rollout(policy, batch, mode="sample", rng=rng, track_grad=True,
                      depot_first=cfg.depot_first, max_rollouts=max_roll)
        rewards = -res.lengths
        if cfg.algorithm == "rs":
            xi = min(cfg.xi, rewards.shape[1])
            w = rs_weights(rewards, xi)
            loss = policy_loss(res.log_prob, w, xi)
        else:
            w = shared_baseline_weights(rewards)
            loss = policy_loss(res.log_prob, w)
        lv = float(loss.data)
        if not math.isfinite(lv):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}: rewards [{rewards.min():.4f}, {rewards.max():.4f}]")
        losses.append(lv)
        policy.zero_grad()
        if np.any(w != 0):
            loss.backward()
            try:
                adam_step(params, adam)
            except NonFiniteGradientError as exc:
                raise TrainingDivergedError(f"step {step}: {exc}") from exc
        if progress is not None:
            progress(step, lv, float(res.lengths.min(axis=1).mean()))
        if cfg.val_every and step % cfg.val_every == 0 and i + 1 < cfg.steps:
            run_validation(step)
        if cfg.ckpt_every and ckpt_dir is not None and step % cfg.ckpt_every == 0:
            save_checkpoint(make_ckpt(step), Path(ckpt_dir) / f"step{step:07d}.ckpt")
    if cfg.steps > 0:
        run_validation(step)
    return TrainResult(make_ckpt(step), curve, losses)


def _append_curve(path, step, name, cost):
    with open(path, "a", newline="") as fh:
        csv.writer(fh).writerow([step, name, repr(cost)])


def read_curve(path) -> List[Tuple[int, str, float]]:
    with open(path, newline="") as fh:
        return [(int(r["step"]), r["val_set"], float(r["mean_cost"])) for r in csv.DictReader(fh)]
