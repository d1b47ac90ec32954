"""Time the numba kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called once first so compile time is excluded; results are
checked for equality before timing.
"""
import argparse
import time

import numpy as np

from ensroute import kernels as K


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    B, P, n = 16, 100, 101
    coords = rng.random((B, n, 2))
    current = rng.integers(0, n, size=(B, P))
    cand = rng.random((B, P, n)) < 0.6
    cand[np.arange(B)[:, None], np.arange(P)[None, :], current] = False
    seqs = np.stack([np.stack([rng.permutation(n) for _ in range(P)]) for _ in range(B)])
    small = rng.random((9, 2))
    yield ("knn_polar B=16 P=100 n=101 k=100",
           lambda: K.knn_polar_numba(coords, current, cand, 100),
           lambda: K.knn_polar_numpy(coords, current, cand, 100))
    yield ("cyclic_lengths B=16 P=100 T=101",
           lambda: K.cyclic_lengths_numba(coords, seqs),
           lambda: K.cyclic_lengths_numpy(coords, seqs))
    yield ("brute_force_tsp n=9",
           lambda: K.brute_force_tsp_numba(small),
           lambda: K.brute_force_tsp_numpy(small))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':40s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}")
    for name, fast, slow in cases(rng):
        a, b = fast(), slow()
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            if not np.allclose(x, y, rtol=1e-12, atol=1e-12):
                raise SystemExit(f"{name}: backends disagree")
        tf, ts = _time(fast, args.repeat), _time(slow, args.repeat)
        print(f"{name:40s} {tf:10.5f} {ts:10.5f} {ts / tf:8.1f}x")


if __name__ == "__main__":
    main()
