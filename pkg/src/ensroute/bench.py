"""Benchmark evaluation: gaps, scale buckets, and the one-sided signed-rank test."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import env as E
from .io_formats import read_vrplib, write_solution
from .solver import solve

log = logging.getLogger(__name__)

DEFAULT_BOUNDARIES = (200, 500, 1000)
RECORD_FIELDS = ("name", "n", "method", "cost", "ref", "gap", "wall_time")


@dataclass
class BenchRecord:
    name: str
    n: int
    method: str
    cost: float
    ref: float
    gap: float
    wall_time: float


def gap(cost: float, ref: float) -> float:
    if not ref > 0:
        raise ValueError(f"reference value must be positive, got {ref}")
    return (cost - ref) / ref


def bucket_labels(boundaries=DEFAULT_BOUNDARIES) -> List[str]:
    labels = [f"N<={boundaries[0]}"]
    for lo, hi in zip(boundaries[:-1], boundaries[1:]):
        labels.append(f"{lo}<N<={hi}")
    labels.append(f"N>{boundaries[-1]}")
    return labels


def bucket_of(n: int, boundaries=DEFAULT_BOUNDARIES) -> str:
    labels = bucket_labels(boundaries)
    for label, hi in zip(labels, boundaries):
        if n <= hi:
            return label
    return labels[-1]


def aggregate(records: Sequence[BenchRecord], boundaries=DEFAULT_BOUNDARIES, mode="cvrplib") -> Dict[str, dict]:
    """Per-bucket and total summaries.

    ``cvrplib`` mode averages per-instance gaps. ``tsplib`` mode reports the
    mean cost, the mean reference and the gap between those two means.
    Empty buckets are left out.
    """
    if not records:
        raise ValueError("no records to aggregate")
    if mode not in ("cvrplib", "tsplib"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    groups: Dict[str, List[BenchRecord]] = {label: [] for label in bucket_labels(boundaries)}
    for r in records:
        groups[bucket_of(r.n, boundaries)].append(r)
    out = {}
    for label, rs in list(groups.items()) + [("Total", list(records))]:
        if not rs:
            log.info("bucket %s has no records; omitted", label)
            continue
        if mode == "cvrplib":
            out[label] = {"count": len(rs), "mean_gap": float(np.mean([r.gap for r in rs]))}
        else:
            mc = float(np.mean([r.cost for r in rs]))
            mr = float(np.mean([r.ref for r in rs]))
            out[label] = {"count": len(rs), "mean_cost": mc, "mean_ref": mr, "gap": gap(mc, mr)}
    return out


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank, one-sided
# ---------------------------------------------------------------------------

@dataclass
class WilcoxonResult:
    statistic: float  # sum of ranks of positive differences
    p_value: float
    n: int  # non-zero differences used
    method: str


def _midranks(x):
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_one_sided(a, b, exact_max_n: int = 25) -> WilcoxonResult:
    """Test H0 "``a`` is not larger than ``b``" against ``a > b`` on paired samples.

    Zero differences are dropped. Up to ``exact_max_n`` remaining pairs the
    p-value comes from the exact null distribution of the positive rank sum
    (midranks for ties); above that it uses the normal approximation with
    tie correction and a continuity correction.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        warnings.warn("all pairs are tied; returning p = 1")
        return WilcoxonResult(0.0, 1.0, 0, "degenerate")
    ranks = _midranks(np.abs(d))
    t_plus = float(ranks[d > 0].sum())
    if n <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(np.int64)
        total = int(doubled.sum())
        counts = np.zeros(total + 1, dtype=np.float64)
        counts[0] = 1.0
        for r in doubled:  # each rank enters the positive sum or not
            shifted = np.zeros_like(counts)
            shifted[r:] = counts[:-r]
            counts += shifted
        t2 = int(round(2 * t_plus))
        p = float(counts[t2:].sum() / counts.sum())
        return WilcoxonResult(t_plus, min(p, 1.0), n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_counts ** 3) - tie_counts).sum()) / 48.0
    z = (t_plus - mean - 0.5) / math.sqrt(var)
    p = 0.5 * math.erfc(z / math.sqrt(2.0))
    return WilcoxonResult(t_plus, p, n, "normal")


# ---------------------------------------------------------------------------
# Records on disk
# ---------------------------------------------------------------------------

def write_records(records: Iterable[BenchRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.name, r.n, r.method, repr(float(r.cost)), repr(float(r.ref)),
                        repr(float(r.gap)), f"{r.wall_time:.6f}"])


def read_records(path) -> List[BenchRecord]:
    with open(path, newline="") as fh:
        return [BenchRecord(row["name"], int(row["n"]), row["method"], float(row["cost"]),
                            float(row["ref"]), float(row["gap"]), float(row["wall_time"]))
                for row in csv.DictReader(fh)]


def run_benchmark(policy, instance_paths: Sequence, bks: Dict[str, float], method: str,
                  solution_dir=None, n_rollouts: Optional[int] = None) -> List[BenchRecord]:
    """Solve each instance serially and compare with its reference value.

    Instances without a reference (in ``bks`` or the file comment) are solved
    but skipped with a warning.
    """
    records = []
    for path in instance_paths:
        inst, meta = read_vrplib(path)
        ref = bks.get(inst.name, bks.get(Path(path).stem, meta.bks))
        res = solve(policy, inst, n_rollouts=n_rollouts)
        rep = E.feasibility_check(inst, res.solution.tour)
        if not rep.ok:
            raise RuntimeError(f"{inst.name}: infeasible solution {rep.violations}")
        if solution_dir is not None:
            Path(solution_dir, f"{inst.name}.sol").write_text(
                write_solution(inst, res.solution.tour, res.solution.objective))
        if ref is None:
            warnings.warn(f"no reference value for {inst.name}; record skipped")
            continue
        records.append(BenchRecord(inst.name, inst.n_customers, method, res.solution.objective,
                                   float(ref), gap(res.solution.objective, float(ref)), res.wall_time))
    return records
