"""Acceptance suite: one test per headline criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import itertools
import time

import numpy as np
import pytest

from ensroute import env as E
from ensroute import selfcheck
from ensroute.bench import wilcoxon_one_sided
from ensroute.global_policy import GlobalConfig, GlobalPolicy
from ensroute.instances import GenConfig, Kind, gen_instance
from ensroute.io_formats import parse_vrplib, read_vrplib, write_vrplib
from ensroute.kernels import brute_force_tsp, cyclic_lengths
from ensroute.local_policy import LocalConfig, LocalPolicy, instance_features
from ensroute.nn.checkpoint import load, save
from ensroute.nn.gradcheck import grad_check
from ensroute.solver import make_policy, policy_from_checkpoint, rollout, solve
from ensroute.trainer import TrainConfig, policy_loss, rs_weights, train, validation_sets

from conftest import ACCEPTANCE, FIXTURES
from test_local_policy import random_state


def record(name, ok, detail):
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


# ---------------------------------------------------------------------------

def test_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    checks = selfcheck._op_checks(rng)
    lp = rng.normal(size=(3, 6))
    w = rs_weights(rng.normal(size=(3, 6)), 3)
    checks.append(("rs_loss", lambda: grad_check(lambda t: policy_loss(t, w, 3), lp)))
    for seed in range(3):
        for kind in (Kind.TSP, Kind.CVRP):
            checks.append((f"ensemble+rs_loss {kind.value} seed{seed}",
                           lambda s=seed, k=kind: selfcheck._composite_loss_check(np.random.default_rng(s), kind=k)))
    errs = {name: fn() for name, fn in checks}
    elapsed = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-4 and elapsed < 300
    record("gradient correctness", ok,
           f"{len(errs)} checks, worst {worst} {errs[worst]:.1e} (< 1e-4), {elapsed:.0f}s (< 300s)")
    assert ok, errs


def test_feasibility_untrained_cvrp():
    rng = np.random.default_rng(2024)
    policy = make_policy(Kind.CVRP, preset="desk", seed=1)
    t0 = time.perf_counter()
    bad = 0
    for i in range(1000):
        inst = gen_instance(GenConfig(), Kind.CVRP, rng, n=int(rng.integers(20, 201)))
        res = solve(policy, inst, n_rollouts=8)
        rep = E.feasibility_check(inst, res.solution.tour)
        bad += not rep.ok
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 300
    record("feasibility", ok, f"1000 CVRP N in [20,200], {1000 - bad}/1000 feasible, {elapsed:.0f}s (< 300s)")
    assert ok


def _reference_rs(r, xi):
    idx = sorted(range(len(r)), key=lambda i: (-r[i], i))[:xi]
    base = r[idx[-1]]
    a_max = max(r[i] - base for i in idx)
    out = [0.0] * len(r)
    if a_max > 0:
        for i in idx:
            out[i] = (r[i] - base) / a_max
    return out


def test_rs_oracle():
    rng = np.random.default_rng(7)
    mism = 0
    n_ties = n_xi1 = 0
    for k in range(10_000):
        p = int(rng.integers(1, 25))
        if k % 3 == 0:
            r = rng.integers(-5, 1, size=p).astype(float)  # many ties
        else:
            r = -rng.exponential(10.0, size=p)
        xi = 1 if k % 10 == 0 else int(rng.integers(1, p + 1))
        n_ties += len(np.unique(r)) < p
        n_xi1 += xi == 1
        mism += rs_weights(r, xi).tolist() != _reference_rs(r.tolist(), xi)
    ok = mism == 0
    record("rs_weights oracle", ok, f"10000 vectors ({n_ties} with ties, {n_xi1} with xi=1), {mism} mismatches")
    assert ok


def test_local_transferability():
    rng = np.random.default_rng(11)
    kinds = [Kind.TSP, Kind.CVRP]
    lp = {k: LocalPolicy(k, LocalConfig(), rng, np.float32) for k in kinds}
    zero = {k: LocalPolicy(k, LocalConfig(), rng, np.float32) for k in kinds}
    for z in zero.values():
        z.zero_()
    diff = 0
    argmax_bad = 0
    states = 0
    while states < 1000:
        kind = kinds[states % 2]
        inst, st = random_state(kind, rng, int(rng.integers(3, 150)))
        feats = instance_features(inst)[None]
        base = lp[kind].local_scores(st, feats).data
        for tr in (lambda c: c * rng.uniform(0.01, 100.0), lambda c: c + rng.uniform(-50, 50, size=2)):
            moved = st.copy()
            moved.coords = tr(st.coords)
            diff += base.tobytes() != lp[kind].local_scores(moved, feats).data.tobytes()
        u = zero[kind].local_scores(st, feats).data
        mask = E.action_mask(st)
        for p in range(st.batch_shape[1]):
            if st.done[0, p] or states >= 1000:
                continue
            valid = np.flatnonzero(mask[0, p])
            d = np.linalg.norm(inst.coords[valid] - inst.coords[st.current[0, p]], axis=1)
            argmax_bad += valid[np.argmax(u[0, p, valid])] != valid[np.argmin(d)]
            states += 1
    ok = diff == 0 and argmax_bad == 0
    record("local transferability", ok,
           f"float32 u_local differs after scaling/translation in {diff} cases; "
           f"zero-MLP argmax != nearest valid in {argmax_bad}/1000 states")
    assert ok


def test_encoder_permutation_equivariance():
    rng = np.random.default_rng(3)
    enc = {k: GlobalPolicy(k, GlobalConfig.preset("desk"), np.random.default_rng(0), np.float64)
           for k in (Kind.TSP, Kind.CVRP)}
    worst = 0.0
    for i in range(100):
        kind = Kind.TSP if i % 2 else Kind.CVRP
        inst = gen_instance(GenConfig(), kind, rng, n=int(rng.integers(5, 60)))
        n = inst.n_nodes
        perm = rng.permutation(n) if kind is Kind.TSP else np.concatenate(([0], 1 + rng.permutation(n - 1)))
        frac = None if kind is Kind.TSP else inst.demands / inst.capacity
        a = enc[kind].encode(inst.coords, frac).embeddings.data[0][perm]
        b = enc[kind].encode(inst.coords[perm], None if frac is None else frac[perm]).embeddings.data[0]
        worst = max(worst, float(np.abs(a - b).max()))
    ok = worst < 1e-5
    record("encoder permutation equivariance", ok, f"100 instances, desk encoder, max |diff| {worst:.1e} (< 1e-5)")
    assert ok


# ---------------------------------------------------------------------------
# desk-scale learning

DESK = TrainConfig(kind="TSP", preset="tiny", steps=2000, scale_lo=10, scale_hi=10, max_batch=64, xi=10,
                   lr=1e-4, seed=1234, val_sizes=(10,), val_count=100)


@pytest.fixture(scope="module")
def desk_run():
    t0 = time.perf_counter()
    res = train(DESK)
    elapsed = time.perf_counter() - t0
    held_out = validation_sets(DESK)["uniform_n10"]
    opt = np.array([brute_force_tsp(i.coords)[0] for i in held_out])
    policy = policy_from_checkpoint(res.checkpoint)
    costs = rollout(policy, held_out).lengths.min(axis=1)
    untrained = res.curve[0][2]
    final = res.curve[-1][2]
    return dict(elapsed=elapsed, gap=float(np.mean((costs - opt) / opt)), untrained=untrained, final=final,
                opt=float(opt.mean()))


def test_desk_learning_gap(desk_run):
    r = desk_run
    ok = r["gap"] <= 0.05 and r["final"] < r["untrained"] and r["elapsed"] < 3600
    record("desk learning: gap", ok,
           f"mean gap to optimum {100 * r['gap']:.2f}% (<= 5%), validation cost {r['untrained']:.4f} -> "
           f"{r['final']:.4f}, {r['elapsed']:.0f}s (< 3600s)")
    assert ok


@pytest.mark.xfail(strict=True, reason="unattainable: 80% of the untrained cost is below the exhaustive optimum; "
                                       "see the decision ledger")
def test_desk_learning_relative_improvement(desk_run):
    r = desk_run
    target = 0.8 * r["untrained"]
    ok = r["final"] <= target
    record("desk learning: >= 20% below untrained", ok,
           f"final {r['final']:.4f} vs target {target:.4f}; the optimum itself is {r['opt']:.4f}, "
           f"so at most {100 * (1 - r['opt'] / r['untrained']):.1f}% is possible")
    assert ok


# ---------------------------------------------------------------------------

def test_ensemble_neutrality():
    rng = np.random.default_rng(5)
    same = 0
    for i in range(100):
        kind = Kind.TSP if i % 2 else Kind.CVRP
        g = make_policy(kind, preset="desk", local_ks=(), seed=i)
        z = make_policy(kind, preset="desk", seed=i, local_mode="zero")
        inst = gen_instance(GenConfig(), kind, rng, n=int(rng.integers(5, 40)))
        same += np.array_equal(rollout(g, [inst]).tours, rollout(z, [inst]).tours)
    ok = same == 100
    record("ensemble neutrality", ok, f"greedy trajectories identical on {same}/100 instances")
    assert ok


def _enumerated_p(a, b):
    d = [x - y for x, y in zip(a, b) if x != y]
    mags = [abs(v) for v in d]
    ranks = [sum(m < v for m in mags) + (sum(m == v for m in mags) + 1) / 2 for v in mags]
    obs = sum(r for r, v in zip(ranks, d) if v > 0)
    hits = sum(1 for signs in itertools.product((False, True), repeat=len(d))
               if sum(r for r, s in zip(ranks, signs) if s) >= obs - 1e-9)
    return hits / 2 ** len(d)


def test_wilcoxon_exactness():
    rng = np.random.default_rng(9)
    worst = 0.0
    count = 0
    for k in range(3000):
        n = int(rng.integers(1, 11))
        if k % 2:
            a, b = rng.integers(0, 4, n).astype(float), rng.integers(0, 4, n).astype(float)
        else:
            a, b = rng.normal(size=n), rng.normal(size=n)
        if np.all(a == b):
            continue
        worst = max(worst, abs(wilcoxon_one_sided(a, b).p_value - _enumerated_p(a.tolist(), b.tolist())))
        count += 1
    ok = worst < 1e-12
    record("wilcoxon exactness", ok, f"{count} samples with n <= 10, max |p - enumeration| {worst:.1e}")
    assert ok


def test_parser_round_trip():
    paths = sorted((FIXTURES / "corpus").iterdir())
    bad = []
    for path in paths:
        inst, meta = parse_vrplib(path.read_text())
        out = write_vrplib(inst, meta)
        again, meta2 = parse_vrplib(out)
        if not (again == inst and write_vrplib(again, meta2) == out):
            bad.append(path.name)
    tri, _ = read_vrplib(FIXTURES / "corpus" / "tri3.tsp")
    pairs = np.array([[[0, 1], [0, 2], [1, 2]]])
    edges = (cyclic_lengths(tri.coords[None], pairs, rounded=True)[0] / 2).tolist()
    tour = E.tour_length(tri, [0, 1, 2])
    ok = not bad and edges == [3.0, 4.0, 5.0] and tour == 12.0
    record("parser round trip", ok, f"{len(paths) - len(bad)}/{len(paths)} fixtures round-trip; "
                                    f"tri3 edges {edges}, tour {tour}")
    assert ok


def test_training_determinism(tmp_path):
    same = []
    for kind in ("TSP", "CVRP"):
        cfg = TrainConfig(kind=kind, preset="tiny", steps=15, scale_lo=8, scale_hi=12, max_batch=8, xi=4,
                          lr=1e-3, local_ks=(20,), local_hidden=64, val_sizes=(8,), val_count=4, seed=99)
        paths = []
        for run in range(2):
            p = tmp_path / f"{kind}{run}.ckpt"
            save(train(cfg).checkpoint, p)
            paths.append(p)
        same.append(paths[0].read_bytes() == paths[1].read_bytes())
        load(paths[0])
    ok = all(same)
    record("determinism", ok, f"identical checkpoint bytes for TSP and CVRP runs: {same}")
    assert ok
