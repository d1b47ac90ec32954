"""Hot numeric kernels with a numba path and a pure-numpy path.

Both paths live side by side so they can be tested and benchmarked against
each other. The public names at the bottom dispatch on ``_accel.USE_NUMBA``.
"""
import itertools

import numpy as np

from . import _accel
from ._accel import njit

PAD_RHO = 1.0
PAD_THETA = 0.0


# ---------------------------------------------------------------------------
# K nearest neighbours in polar coordinates about the current node
# ---------------------------------------------------------------------------

def knn_polar_numpy(coords, current, candidates, k):
    """Nearest candidates of every current node, as normalized polar features.

    Parameters
    ----------
    coords : (B, n, 2) float64
    current : (B, P) int
    candidates : (B, P, n) bool
    k : int

    Returns
    -------
    idx : (B, P, k) int64, ``-1`` for padded slots
    rho : (B, P, k) float64, distance over the largest neighbour distance
    theta : (B, P, k) float64, ``atan2`` angle about the current node
    """
    B, P = current.shape
    n = coords.shape[1]
    b_idx = np.arange(B)[:, None]
    cur_xy = coords[b_idx, current]  # (B, P, 2)
    dx = coords[:, None, :, 0] - cur_xy[..., 0:1]
    dy = coords[:, None, :, 1] - cur_xy[..., 1:2]
    dist = np.sqrt(dx * dx + dy * dy)
    dist = np.where(candidates, dist, np.inf)
    order = np.argsort(dist, axis=-1, kind="stable")
    kk = min(k, n)
    order = order[..., :kk]
    d_sel = np.take_along_axis(dist, order, axis=-1)
    valid = np.isfinite(d_sel)
    count = valid.sum(axis=-1)

    idx = np.full((B, P, k), -1, dtype=np.int64)
    rho = np.full((B, P, k), PAD_RHO)
    theta = np.full((B, P, k), PAD_THETA)
    idx[..., :kk] = np.where(valid, order, -1)

    last = np.maximum(count - 1, 0)
    d_max = np.take_along_axis(np.where(valid, d_sel, 0.0), last[..., None], axis=-1)
    safe = np.where(d_max > 0.0, d_max, 1.0)
    r = np.where(d_max > 0.0, d_sel / safe, 0.0)
    t = np.arctan2(
        np.take_along_axis(dy, np.where(valid, order, 0), axis=-1),
        np.take_along_axis(dx, np.where(valid, order, 0), axis=-1),
    )
    rho[..., :kk] = np.where(valid, r, PAD_RHO)
    theta[..., :kk] = np.where(valid, t, PAD_THETA)
    return idx, rho, theta


@njit
def _knn_polar_numba(coords, current, candidates, k, idx, rho, theta):
    B, P = current.shape
    n = coords.shape[1]
    dist = np.empty(n)
    dxs = np.empty(n)
    dys = np.empty(n)
    for b in range(B):
        for p in range(P):
            c = current[b, p]
            cx = coords[b, c, 0]
            cy = coords[b, c, 1]
            for j in range(n):
                dx = coords[b, j, 0] - cx
                dy = coords[b, j, 1] - cy
                dxs[j] = dx
                dys[j] = dy
                if candidates[b, p, j]:
                    dist[j] = np.sqrt(dx * dx + dy * dy)
                else:
                    dist[j] = np.inf
            order = np.argsort(dist, kind="mergesort")
            count = 0
            for s in range(min(k, n)):
                j = order[s]
                if dist[j] == np.inf:
                    break
                count += 1
            if count == 0:
                continue
            d_max = dist[order[count - 1]]
            for s in range(count):
                j = order[s]
                idx[b, p, s] = j
                if d_max > 0.0:
                    rho[b, p, s] = dist[j] / d_max
                else:
                    rho[b, p, s] = 0.0
                theta[b, p, s] = np.arctan2(dys[j], dxs[j])


def knn_polar_numba(coords, current, candidates, k):
    B, P = current.shape
    idx = np.full((B, P, k), -1, dtype=np.int64)
    rho = np.full((B, P, k), PAD_RHO)
    theta = np.full((B, P, k), PAD_THETA)
    _knn_polar_numba(
        np.ascontiguousarray(coords, dtype=np.float64),
        np.ascontiguousarray(current, dtype=np.int64),
        np.ascontiguousarray(candidates, dtype=np.bool_),
        int(k), idx, rho, theta,
    )
    return idx, rho, theta


# ---------------------------------------------------------------------------
# Cyclic sequence lengths
# ---------------------------------------------------------------------------

def cyclic_lengths_numpy(coords, seqs, rounded=False):
    """Closed-walk length of every node sequence.

    ``coords`` is (B, n, 2); ``seqs`` is (B, P, T). Repeated consecutive
    nodes contribute zero, which is how CVRP tours are padded with the depot.
    """
    b_idx = np.arange(coords.shape[0])[:, None, None]
    pts = coords[b_idx, seqs]  # (B, P, T, 2)
    nxt = np.roll(pts, -1, axis=2)
    d = pts - nxt
    edge = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])
    if rounded:
        edge = np.floor(edge + 0.5)
    return edge.sum(axis=-1)


@njit
def _cyclic_lengths_numba(coords, seqs, rounded, out):
    B, P, T = seqs.shape
    for b in range(B):
        for p in range(P):
            total = 0.0
            for t in range(T):
                i = seqs[b, p, t]
                j = seqs[b, p, (t + 1) % T]
                dx = coords[b, i, 0] - coords[b, j, 0]
                dy = coords[b, i, 1] - coords[b, j, 1]
                e = np.sqrt(dx * dx + dy * dy)
                if rounded:
                    e = np.floor(e + 0.5)
                total += e
            out[b, p] = total


def cyclic_lengths_numba(coords, seqs, rounded=False):
    B, P, _ = seqs.shape
    out = np.empty((B, P))
    _cyclic_lengths_numba(
        np.ascontiguousarray(coords, dtype=np.float64),
        np.ascontiguousarray(seqs, dtype=np.int64),
        bool(rounded), out,
    )
    return out


# ---------------------------------------------------------------------------
# Exhaustive TSP
# ---------------------------------------------------------------------------

def _dist_matrix(coords, rounded):
    d = coords[:, None, :] - coords[None, :, :]
    m = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])
    if rounded:
        m = np.floor(m + 0.5)
    return m


def brute_force_tsp_numpy(coords, rounded=False):
    """Optimal tour by enumerating every permutation of nodes ``1..n-1``."""
    n = len(coords)
    if n <= 3:
        tour = np.arange(n)
        m = _dist_matrix(coords, rounded)
        return float(sum(m[tour[i], tour[(i + 1) % n]] for i in range(n))), tour
    m = _dist_matrix(coords, rounded)
    best = np.inf
    best_perm = None
    for perm in itertools.permutations(range(1, n)):
        if perm[0] > perm[-1]:
            continue  # mirror image of an earlier tour
        total = m[0, perm[0]] + m[perm[-1], 0]
        for a, b in zip(perm[:-1], perm[1:]):
            total += m[a, b]
        if total < best:
            best = total
            best_perm = perm
    return float(best), np.array((0,) + best_perm)


@njit
def _brute_force_tsp_numba(m):
    n = m.shape[0]
    k = n - 1
    a = np.arange(1, n)
    c = np.zeros(k, dtype=np.int64)
    best = np.inf
    best_perm = a.copy()

    total = m[0, a[0]] + m[a[k - 1], 0]
    for t in range(k - 1):
        total += m[a[t], a[t + 1]]
    best = total
    best_perm[:] = a

    # Heap's algorithm
    i = 1
    while i < k:
        if c[i] < i:
            if i % 2 == 0:
                s = 0
            else:
                s = c[i]
            tmp = a[s]
            a[s] = a[i]
            a[i] = tmp
            if a[0] < a[k - 1]:
                total = m[0, a[0]] + m[a[k - 1], 0]
                for t in range(k - 1):
                    total += m[a[t], a[t + 1]]
                if total < best:
                    best = total
                    best_perm[:] = a
            c[i] += 1
            i = 1
        else:
            c[i] = 0
            i += 1
    return best, best_perm


def brute_force_tsp_numba(coords, rounded=False):
    n = len(coords)
    m = _dist_matrix(np.asarray(coords, dtype=np.float64), rounded)
    if n <= 3:
        return brute_force_tsp_numpy(coords, rounded)
    best, perm = _brute_force_tsp_numba(m)
    return float(best), np.concatenate(([0], perm))


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

if _accel.USE_NUMBA:
    knn_polar = knn_polar_numba
    cyclic_lengths = cyclic_lengths_numba
    brute_force_tsp = brute_force_tsp_numba
else:
    knn_polar = knn_polar_numpy
    cyclic_lengths = cyclic_lengths_numpy
    brute_force_tsp = brute_force_tsp_numpy

BACKEND = "numba" if _accel.USE_NUMBA else "numpy"
