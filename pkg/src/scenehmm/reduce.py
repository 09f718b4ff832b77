"""PCA and k-means for compressing grid descriptors and locating class centroids."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Fitted PCA projection.

    Attributes
    ----------
    mean : ndarray, shape (d,)
    components : ndarray, shape (k, d)
        Orthonormal rows, leading direction first.
    eigenvalues : ndarray, shape (k,)
        Sample-covariance eigenvalues, non-increasing.
    rank_deficient : bool
        True when fewer than ``k`` eigenvalues are numerically non-zero; the
        trailing components then span an arbitrary orthonormal completion.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    rank_deficient: bool = False

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.ravel().tolist(),
            "k": self.k,
            "d": self.d,
            "eigenvalues": self.eigenvalues.tolist(),
            "rank_deficient": self.rank_deficient,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        comps = np.array(d["components"], dtype=np.float64).reshape(d["k"], d["d"])
        return cls(np.array(d["mean"], dtype=np.float64), comps,
                   np.array(d["eigenvalues"], dtype=np.float64), bool(d["rank_deficient"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PcaModel":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, PcaModel):
            return NotImplemented
        return (
            np.array_equal(self.mean, other.mean)
            and np.array_equal(self.components, other.components)
            and np.array_equal(self.eigenvalues, other.eigenvalues)
            and self.rank_deficient == other.rank_deficient
        )

    __hash__ = None


def pca_fit(samples, k: int) -> PcaModel:
    """Top-``k`` eigenvectors of the sample covariance (divisor ``n - 1``).

    Each component is sign-fixed so that its largest-magnitude entry is
    non-negative, which makes the fit reproducible across runs.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DimensionError("PCA needs at least 2 samples in a 2-D array")
    n, d = X.shape
    if not 1 <= k <= min(d, n - 1):
        raise ParameterError(f"k={k} outside [1, {min(d, n - 1)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    vals = np.clip(vals[order], 0.0, None)
    comps = vecs[:, order].T.copy()
    lead = np.argmax(np.abs(comps), axis=1)
    signs = np.where(comps[np.arange(k), lead] < 0, -1.0, 1.0)
    comps *= signs[:, None]
    scale = vals[0] if vals[0] > 0 else 1.0
    tiny = vals <= RANK_TOL * scale
    vals[tiny] = 0.0
    return PcaModel(mean, comps, vals, bool(tiny.any()))


def pca_apply(model: PcaModel, x) -> np.ndarray:
    """Project one vector ``(d,)`` or a batch ``(..., d)`` to ``k`` dims."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.d:
        raise DimensionError(f"expected dimension {model.d}, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, y) -> np.ndarray:
    return model.mean + np.asarray(y, dtype=np.float64) @ model.components


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeans_inertia(samples, centroids) -> float:
    X = np.asarray(samples, dtype=np.float64)
    return float(_sq_dists(X, np.asarray(centroids, dtype=np.float64)).min(axis=1).sum())


def kmeans_fit(samples, k: int, seed: int = 0, max_iter: int = 100,
               return_history: bool = False):
    """Lloyd's k-means with k-means++ seeding.

    ``k == 1`` short-circuits to the exact sample mean. Returns a ``(k, d)``
    centroid array; with ``return_history`` also the inertia after every
    iteration.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} must satisfy 1 <= k <= {n}")
    if k == 1:
        C = X.mean(axis=0, keepdims=True)
        return (C, [kmeans_inertia(X, C)]) if return_history else C

    rng = np.random.default_rng(seed)
    C = np.empty((k, X.shape[1]))
    C[0] = X[rng.integers(n)]
    closest = ((X - C[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        C[i] = X[idx]
        closest = np.minimum(closest, ((X - C[i]) ** 2).sum(axis=1))

    history = []
    assign = None
    for _ in range(max_iter):
        D = _sq_dists(X, C)
        new_assign = D.argmin(axis=1)
        history.append(float(D[np.arange(n), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = X[assign == j]
            if len(members):
                C[j] = members.mean(axis=0)
            else:
                # empty cluster: reseed at the sample farthest from its centre
                far = int(D[np.arange(n), assign].argmax())
                C[j] = X[far]
    history.append(kmeans_inertia(X, C))
    return (C, history) if return_history else C
