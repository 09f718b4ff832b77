"""Convex weighting of classifier probability scores.

Weights live on the probability simplex and minimize the summed Euclidean
residual between the weighted score vectors and the one-hot labels::

    J(w) = sum_j || sum_i w_i p_i(x_j) - D(x_j) ||_2,   w >= 0,  sum(w) = 1
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DimensionError, FormatError, ParameterError


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto ``{w : w >= 0, sum(w) = 1}``.

    Sort-based threshold: with ``u`` sorted descending, ``rho`` is the last
    index where ``u_rho > (sum_{k<=rho} u_k - 1) / (rho + 1)``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError("simplex_project expects a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise ParameterError("simplex_project needs finite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def one_hot(labels, m: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ParameterError(f"labels must lie in 0..{m - 1}")
    D = np.zeros((labels.size, m))
    D[np.arange(labels.size), labels] = 1.0
    return D


def _check(scores, targets):
    S = np.asarray(scores, dtype=np.float64)
    D = np.asarray(targets, dtype=np.float64)
    if S.ndim != 3 or D.ndim != 2 or S.shape[1:] != D.shape:
        raise DimensionError(f"scores {S.shape} and labels {D.shape} are inconsistent")
    return S, D


def objective(w, scores, targets, squared: bool = False) -> float:
    """Summed residual norm for weights ``w`` (``C``), scores ``(C, N, m)``
    and one-hot targets ``(N, m)``. ``squared`` sums squared norms instead."""
    S, D = _check(scores, targets)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (S.shape[0],):
        raise DimensionError(f"expected {S.shape[0]} weights, got shape {w.shape}")
    r = np.einsum("c,cnm->nm", w, S) - D
    sq = np.einsum("nm,nm->n", r, r)
    return float(sq.sum()) if squared else float(np.sqrt(sq).sum())


def subgradient(w, scores, targets, squared: bool = False) -> np.ndarray:
    S, D = _check(scores, targets)
    r = np.einsum("c,cnm->nm", np.asarray(w, dtype=np.float64), S) - D
    if squared:
        return 2.0 * np.einsum("cnm,nm->c", S, r)
    norms = np.sqrt(np.einsum("nm,nm->n", r, r))
    scale = np.where(norms > 1e-12, 1.0 / np.where(norms > 1e-12, norms, 1.0), 0.0)
    return np.einsum("cnm,nm->c", S, r * scale[:, None])


@dataclass
class WeightSolution:
    w: np.ndarray
    objective: float
    baselines: dict
    iterations: int


def solve_weights(scores, targets, iters: int = 5000, seed: int = 0,
                  squared: bool = False) -> WeightSolution:
    """Projected subgradient descent from uniform weights.

    Step ``k`` (0-based) has length ``0.5 / sqrt(k + 1)``. The returned
    weights are the best point seen, where the vertices and the uniform
    point are seeded as candidates; hence the result is never worse than any
    single classifier or plain averaging. ``seed`` is accepted for API
    stability; the method is deterministic.
    """
    del seed
    if iters < 1:
        raise ParameterError(f"iters must be >= 1, got {iters}")
    S, D = _check(scores, targets)
    C = S.shape[0]
    uniform = np.full(C, 1.0 / C)
    baselines = {"uniform": objective(uniform, S, D, squared)}
    best_w, best_f = uniform, baselines["uniform"]
    for i in range(C):
        e = np.zeros(C)
        e[i] = 1.0
        f = objective(e, S, D, squared)
        baselines[f"vertex_{i}"] = f
        if f < best_f:
            best_w, best_f = e, f
    if C == 1:
        return WeightSolution(np.ones(1), best_f, baselines, 0)

    w = uniform.copy()
    for k in range(iters):
        g = subgradient(w, S, D, squared)
        w = simplex_project(w - (0.5 / math.sqrt(k + 1)) * g)
        f = objective(w, S, D, squared)
        if f < best_f:
            best_w, best_f = w, f
    return WeightSolution(best_w, best_f, baselines, iters)


def fuse(probs, w) -> tuple:
    """Weighted sum of ``C`` probability vectors and its argmax (lowest index on ties).

    ``probs`` may also be ``(C, N, m)``; then labels are returned per row.
    """
    P = np.asarray(probs, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if P.shape[0] != w.shape[0]:
        raise DimensionError(f"{P.shape[0]} score sets but {w.shape[0]} weights")
    fused = np.tensordot(w, P, axes=(0, 0))
    return fused, np.argmax(fused, axis=-1)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def write_scores_csv(path, image_ids, probs) -> None:
    probs = np.asarray(probs, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["image_id"] + [f"class_{j}" for j in range(probs.shape[1])])
        for image_id, row in zip(image_ids, probs):
            wr.writerow([image_id] + [repr(float(x)) for x in row])


def read_scores_csv(path) -> tuple:
    """Return ``(image_ids, (N, m) array)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "image_id":
        raise FormatError(f"{path}: missing image_id header")
    ids = [r[0] for r in rows[1:]]
    try:
        vals = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric score") from exc
    return ids, vals.reshape(len(ids), len(rows[0]) - 1)


def stack_scores(named_scores: dict) -> tuple:
    """Align ``{classifier_id: (ids, probs)}`` into a ``(C, N, m)`` tensor.

    Raises :class:`AlignmentError` unless all classifiers cover the same ids
    in the same order.
    """
    names = list(named_scores)
    ref_ids = named_scores[names[0]][0]
    for name in names[1:]:
        if list(named_scores[name][0]) != list(ref_ids):
            raise AlignmentError(f"score ids of {name!r} differ from {names[0]!r}")
    return names, list(ref_ids), np.stack([named_scores[n][1] for n in names])


def weights_to_json(classifiers, w, **extra) -> str:
    return json.dumps({"classifiers": list(classifiers),
                       "w": [float(x) for x in w], **extra}, indent=1)


def weights_from_json(text: str) -> tuple:
    d = json.loads(text)
    return list(d["classifiers"]), np.array(d["w"], dtype=np.float64)
