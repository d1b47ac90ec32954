"""Tables and SVG plots from benchmark records and training curves.

Output is byte-for-byte deterministic for fixed inputs: SVG ids use a fixed
hash salt and no creation date is embedded.
"""
from __future__ import annotations

import csv
from collections import OrderedDict
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import DEFAULT_BOUNDARIES, BenchRecord, aggregate, bucket_labels  # noqa: E402

_RC = {"svg.hashsalt": "ensroute", "svg.fonttype": "path", "font.size": 9}


def by_method(records: Sequence[BenchRecord]) -> "OrderedDict[str, List[BenchRecord]]":
    out: "OrderedDict[str, List[BenchRecord]]" = OrderedDict()
    for r in sorted(records, key=lambda r: r.method):
        out.setdefault(r.method, []).append(r)
    return out


def summary_rows(records: Sequence[BenchRecord], boundaries=DEFAULT_BOUNDARIES, mode="cvrplib") -> List[dict]:
    """One row per (method, bucket), buckets in ascending order, ``Total`` last."""
    order = bucket_labels(boundaries) + ["Total"]
    rows = []
    for method, rs in by_method(records).items():
        agg = aggregate(rs, boundaries, mode)
        for label in order:
            if label in agg:
                rows.append({"method": method, "bucket": label, "mode": mode, **agg[label]})
    return rows


def write_summary(rows: Sequence[dict], path) -> None:
    cols = ["method", "bucket", "mode", "count"]
    extra = sorted({k for r in rows for k in r} - set(cols))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + extra)
        for r in rows:
            w.writerow([r[c] for c in cols] + [repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "")
                                                for c in extra])


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_bucket_gaps(rows: Sequence[dict], path) -> None:
    """Grouped bars of the gap per bucket, one bar colour per method."""
    key = "mean_gap" if rows and "mean_gap" in rows[0] else "gap"
    methods = list(OrderedDict.fromkeys(r["method"] for r in rows))
    buckets = list(OrderedDict.fromkeys(r["bucket"] for r in rows))
    table: Dict[Tuple[str, str], float] = {(r["method"], r["bucket"]): r[key] for r in rows}
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        width = 0.8 / max(len(methods), 1)
        for j, m in enumerate(methods):
            xs = [i + j * width for i, b in enumerate(buckets) if (m, b) in table]
            ys = [100.0 * table[(m, b)] for b in buckets if (m, b) in table]
            ax.bar(xs, ys, width=width, label=m)
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(buckets))])
        ax.set_xticklabels(buckets)
        ax.set_ylabel("gap (%)")
        ax.legend()
        fig.tight_layout()
        _save(fig, path)


def plot_curve(curve: Sequence[Tuple[int, str, float]], path) -> None:
    """Validation mean cost against training step, one line per validation set."""
    series: "OrderedDict[str, List[Tuple[int, float]]]" = OrderedDict()
    for step, name, cost in curve:
        series.setdefault(name, []).append((step, cost))
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for name, pts in series.items():
            pts = sorted(pts)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
        ax.set_xlabel("training step")
        ax.set_ylabel("mean cost")
        ax.legend()
        fig.tight_layout()
        _save(fig, path)
