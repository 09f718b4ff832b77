"""Independent reference computations used as test oracles.

Everything here is written with plain loops and the standard library (plus
numpy only where a dense linear-algebra routine is the oracle itself). None
of it imports the package under test.
"""

import itertools
import math

import numpy as np


def _dist(a, b):
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def _softmax_neg(ds):
    lo = min(ds)
    ex = [math.exp(-(d - lo)) for d in ds]
    s = sum(ex)
    return [e / s for e in ex]


def scalar_forward(query, exemplars, exclude=None):
    """Normalized forward recursion written from scratch.

    Parameters
    ----------
    query : list of n vectors
    exemplars : dict class -> list of (owner, list of n vectors)
    exclude : owner id to drop when computing emissions

    Returns
    -------
    list of n lists of m probabilities
    """
    classes = sorted(exemplars)
    m = len(classes)
    n = len(query)
    # centroid per (class, position): plain mean over all owners
    cent = {}
    for j in classes:
        seqs = [s for _, s in exemplars[j]]
        for t in range(n):
            dim = len(seqs[0][t])
            cent[j, t] = [sum(s[t][k] for s in seqs) / len(seqs) for k in range(dim)]
    alphas = []
    prev = None
    for t in range(n):
        ds = []
        for j in classes:
            cands = [s[t] for owner, s in exemplars[j] if owner != exclude]
            ds.append(min(_dist(query[t], c) for c in cands))
        emit = _softmax_neg(ds)
        if t == 0:
            raw = [emit[a] * (1.0 / m) for a in range(m)]
        else:
            trans = []
            for k in classes:
                trans.append(_softmax_neg([_dist(cent[k, t - 1], cent[j, t]) for j in classes]))
            raw = []
            for a in range(m):
                acc = 0.0
                for b in range(m):
                    acc += trans[b][a] * prev[b]
                raw.append(emit[a] * acc)
        s = sum(raw)
        prev = [r / s for r in raw]
        alphas.append(prev)
    return alphas


def grid_simplex_project(v, step=1e-4):
    """Closest simplex point to ``v`` (2-D or 3-D) by exhaustive grid search."""
    v = np.asarray(v, dtype=np.float64)
    best, best_d = None, math.inf
    if v.size == 2:
        a = np.arange(0.0, 1.0 + step / 2, step)
        pts = np.column_stack([a, 1.0 - a])
        d = ((pts - v) ** 2).sum(1)
        i = int(d.argmin())
        return pts[i]
    if v.size == 3:
        # every grid point (a, b, 1 - a - b) with a + b <= 1, scanned in row blocks
        a = np.arange(0.0, 1.0 + step / 2, step)
        n = a.size
        B = (a - v[1]) ** 2 + a * a
        for lo in range(0, n, 250):
            rows = np.arange(lo, min(lo + 250, n))
            x = a[rows]
            width = n - lo  # later columns leave the simplex for every row here
            C = 1.0 - x - v[2]
            # (x - v0)^2 + (b - v1)^2 + (C - b)^2, expanded
            d = np.multiply.outer(-2.0 * C, a[:width])
            d += ((x - v[0]) ** 2 + C * C)[:, None]
            d += B[None, :width]
            d[np.arange(width)[None, :] > (n - 1 - rows)[:, None]] = np.inf
            i = int(d.argmin())
            if d.flat[i] < best_d:
                r, c = divmod(i, width)
                best_d = d.flat[i]
                best = np.array([x[r], a[c], 1.0 - x[r] - a[c]])
        return best
    raise ValueError("only 2-D and 3-D inputs")


def line_search_weights(scores, targets, step=1e-3):
    """Min over ``w = (a, 1 - a)``, ``a`` on a uniform grid, of the summed residual norm."""
    S = np.asarray(scores)
    D = np.asarray(targets)
    best = math.inf
    for a in np.arange(0.0, 1.0 + step / 2, step):
        r = a * S[0] + (1.0 - a) * S[1] - D
        best = min(best, float(np.sqrt((r * r).sum(1)).sum()))
    return best


def best_two_partition_inertia(X):
    """Minimum within-cluster sum of squares over all 2-partitions of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    best = math.inf
    for mask in itertools.product([0, 1], repeat=n - 1):
        lab = np.array((0,) + mask)
        if lab.sum() == 0:
            continue
        tot = 0.0
        for c in (0, 1):
            pts = X[lab == c]
            tot += float(((pts - pts.mean(0)) ** 2).sum())
        best = min(best, tot)
    return best


def dual_objective(alpha, y, K):
    """Dual SVM objective ``sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij`` (to maximize)."""
    a = np.asarray(alpha, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(a.sum() - 0.5 * (a * y) @ K @ (a * y))


def brute_dual(y, K, c, step=1e-3):
    """Maximize the dual over a grid for 2 points (opposite labels) or 3 points."""
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    best = -math.inf
    grid = np.arange(0.0, c + step / 2, step)
    if n == 2:
        for a in grid:
            alpha = np.array([a, a])
            best = max(best, dual_objective(alpha, y, K))
        return best
    if n == 3:
        # y'a = 0 fixes the third coefficient
        for a0 in grid:
            for a1 in grid:
                a2 = -(y[0] * a0 + y[1] * a1) * y[2]
                if -1e-12 <= a2 <= c + 1e-12:
                    best = max(best, dual_objective([a0, a1, a2], y, K))
        return best
    raise ValueError("only 2 or 3 points")


def dense_eigenvalues(X, k):
    """Top-``k`` covariance eigenvalues via SVD of the centred data matrix."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(0)
    s = np.linalg.svd(Xc, compute_uv=False)
    return (s**2 / (len(X) - 1))[:k]
