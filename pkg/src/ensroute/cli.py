"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

log = logging.getLogger("ensroute")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _instance_files(paths):
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".vrp", ".tsp")))
        elif p.exists():
            out.append(p)
        else:
            raise UsageError(f"no such instance file or directory: {p}")
    if not out:
        raise UsageError("no instance files found")
    return out


def cmd_generate(args):
    from .instances import DistanceMode, GenConfig, Kind, ScaleSampler, gen_instance
    from .io_formats import write_vrplib

    lo = args.n if args.n_max is None else args.n
    hi = args.n if args.n_max is None else args.n_max
    cfg = GenConfig(scale=ScaleSampler(lo, hi), seed=args.seed)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kind = Kind(args.kind)
    ext = ".tsp" if kind is Kind.TSP else ".vrp"
    for i in range(args.count):
        inst = gen_instance(cfg, kind, rng, name=f"{args.prefix}{i:04d}")
        if args.grid:
            # integer grid coordinates with rounded distances, as in the public libraries
            inst = inst.with_coords(np.round(inst.coords * args.grid), DistanceMode.ROUNDED_INT)
        (out / f"{inst.name}{ext}").write_text(write_vrplib(inst))
    log.info("wrote %d instances to %s", args.count, out)
    return 0


def cmd_train(args):
    from .nn.checkpoint import load, save
    from .trainer import parse_config_text, train

    cfg = parse_config_text(Path(args.config).read_text())
    init = load(args.init) if args.init else None

    def progress(step, loss, cost):
        if args.log_every and step % args.log_every == 0:
            log.info("step %d loss %.6f train cost %.5f", step, loss, cost)

    res = train(cfg, mode=args.mode, init=init, curve_path=args.curve, ckpt_dir=args.ckpt_dir,
                progress=progress)
    save(res.checkpoint, args.out)
    for step, name, cost in res.curve:
        print(f"{step}\t{name}\t{cost:.6f}")
    return 0


def cmd_solve(args):
    from .io_formats import read_vrplib, write_solution
    from .nn.checkpoint import load
    from .solver import policy_from_checkpoint, solve

    policy = policy_from_checkpoint(load(args.checkpoint))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in _instance_files(args.instances):
        inst, _ = read_vrplib(path)
        res = solve(policy, inst, n_rollouts=args.rollouts)
        (out / f"{path.stem}.sol").write_text(
            write_solution(inst, res.solution.tour, res.solution.objective))
        print(f"{inst.name}\t{res.solution.objective:.6f}\t{res.wall_time:.3f}s")
    return 0


def cmd_bench(args):
    from .bench import run_benchmark, write_records
    from .io_formats import load_bks_csv
    from .nn.checkpoint import load
    from .solver import policy_from_checkpoint

    policy = policy_from_checkpoint(load(args.checkpoint))
    bks = load_bks_csv(args.bks) if args.bks else {}
    if args.solutions:
        Path(args.solutions).mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        records = run_benchmark(policy, _instance_files([args.instances]), bks, args.method,
                                solution_dir=args.solutions, n_rollouts=args.rollouts)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    write_records(records, args.out)
    for r in records:
        print(f"{r.name}\t{r.n}\t{r.cost:.6f}\t{r.ref:.6f}\t{100 * r.gap:.3f}%")
    return 0


def cmd_report(args):
    from .bench import read_records
    from .report import plot_bucket_gaps, plot_curve, summary_rows, write_summary
    from .trainer import read_curve

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.records:
        records = [r for p in args.records for r in read_records(p)]
        if not records:
            raise UsageError("record files are empty")
        rows = summary_rows(records, mode=args.mode)
        write_summary(rows, out / f"summary_{args.mode}.csv")
        plot_bucket_gaps(rows, out / f"gaps_{args.mode}.svg")
        for r in rows:
            val = r.get("mean_gap", r.get("gap"))
            print(f"{r['method']}\t{r['bucket']}\t{r['count']}\t{100 * val:.3f}%")
    if args.curve:
        plot_curve(read_curve(args.curve), out / "curve.svg")
    if not args.records and not args.curve:
        raise UsageError("report needs --records and/or --curve")
    return 0


def cmd_selfcheck(args):
    from .selfcheck import run

    return 0 if run(seed=args.seed) else 2


def build_parser():
    p = _Parser(prog="ensroute", description="Global/local ensemble route construction.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="write random uniform instances")
    g.add_argument("--kind", choices=["TSP", "CVRP"], default="CVRP")
    g.add_argument("--n", type=int, required=True, help="customers (lower bound if --n-max is given)")
    g.add_argument("--n-max", type=int)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grid", type=int, default=0, help="scale to an integer grid and use rounded distances")
    g.add_argument("--prefix", default="inst")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train from a key=value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="final checkpoint path")
    t.add_argument("--curve", help="validation curve CSV")
    t.add_argument("--init", help="starting checkpoint")
    t.add_argument("--mode", choices=["small_scale", "varying_scale"], default="small_scale")
    t.add_argument("--ckpt-dir")
    t.add_argument("--log-every", type=int, default=100)
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("solve", help="greedy multi-start inference on instance files")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--rollouts", type=int)
    s.add_argument("instances", nargs="+")
    s.set_defaults(fn=cmd_solve)

    b = sub.add_parser("bench", help="solve a directory and compare with reference values")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--instances", required=True)
    b.add_argument("--bks", help="CSV with name,bks columns")
    b.add_argument("--method", default="ensemble")
    b.add_argument("--out", required=True, help="records CSV")
    b.add_argument("--solutions")
    b.add_argument("--rollouts", type=int)
    b.set_defaults(fn=cmd_bench)

    r = sub.add_parser("report", help="bucket tables and SVG plots")
    r.add_argument("--records", nargs="*", default=[])
    r.add_argument("--curve")
    r.add_argument("--mode", choices=["cvrplib", "tsplib"], default="cvrplib")
    r.add_argument("--out-dir", required=True)
    r.set_defaults(fn=cmd_report)

    c = sub.add_parser("selfcheck", help="gradient checks and oracle comparisons")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: report and exit 2
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
