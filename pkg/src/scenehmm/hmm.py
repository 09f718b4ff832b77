"""Distance-based HMM over zigzag grid sequences.

Hidden states are the classes and observations are the grid descriptors.
Emission and transition probabilities are not learned by EM; they are
softmaxes of negative Euclidean distances to the training data held in a
:class:`ReferenceBank`:

* emission at position ``t`` uses the distance from the query grid to the
  nearest class-``j`` training grid at the same position;
* transition into position ``t`` uses the distance between the class
  centroids at positions ``t - 1`` and ``t``.

The scaled forward variable of each position is read as the posterior of
the classes given that grid, and the per-position posteriors are laid out
class-major into one feature vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .descriptors import GridSequence
from .errors import CoverageError, DimensionError, FormatError, ParameterError
from .reduce import kmeans_fit

DISTANCE_CAP = 700.0


def softmax_neg(distances) -> np.ndarray:
    """``exp(-d) / sum(exp(-d))`` along the last axis, overflow-safe."""
    d = np.minimum(np.asarray(distances, dtype=np.float64), DISTANCE_CAP)
    z = -(d - d.min(axis=-1, keepdims=True))
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ReferenceBank:
    """Training grids and centroids per (class, position).

    Attributes
    ----------
    exemplars : tuple of ndarray
        ``exemplars[j]`` has shape ``(count_j, n, dim)``: every class-``j``
        training sequence. Row ``i`` belongs to image ``owners[j][i]``.
    owners : tuple of tuple of str
    centroids : ndarray, shape (m, n, dim)
    """

    exemplars: tuple
    owners: tuple
    centroids: np.ndarray
    _transitions: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.exemplars) != self.centroids.shape[0]:
            raise DimensionError("exemplar and centroid class counts differ")
        for j, (ex, ow) in enumerate(zip(self.exemplars, self.owners)):
            if ex.shape[0] == 0:
                raise CoverageError(f"class {j} has no exemplars")
            if ex.shape[0] != len(ow):
                raise DimensionError(f"class {j}: {ex.shape[0]} exemplars, {len(ow)} owners")
            if ex.shape[1:] != self.centroids.shape[1:]:
                raise DimensionError(f"class {j} exemplars have shape {ex.shape[1:]}")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("non-finite centroid")

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def n(self) -> int:
        return self.centroids.shape[1]

    @property
    def dim(self) -> int:
        return self.centroids.shape[2]

    def transitions(self) -> np.ndarray:
        """All transition matrices, shape ``(n, m, m)``; entry 0 is unused (NaN)."""
        cached = self._transitions.get("all")
        if cached is None:
            cached = np.full((self.n, self.m, self.m), np.nan)
            for t in range(1, self.n):
                cached[t] = transition(t, self)
            self._transitions["all"] = cached
        return cached

    def to_dict(self) -> dict:
        flat, offsets = [], [0]
        for j in range(self.m):
            for t in range(self.n):
                rows = self.exemplars[j][:, t, :]
                flat.extend(rows.ravel().tolist())
                offsets.append(offsets[-1] + rows.shape[0])
        return {
            "m": self.m,
            "n": self.n,
            "dim": self.dim,
            "offsets": offsets,
            "exemplars": flat,
            "owners": [list(o) for o in self.owners],
            "centroids": self.centroids.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceBank":
        m, n, dim = d["m"], d["n"], d["dim"]
        flat = np.array(d["exemplars"], dtype=np.float64).reshape(-1, dim)
        off = d["offsets"]
        if len(off) != m * n + 1 or off[-1] != flat.shape[0]:
            raise FormatError("bank offsets do not match exemplar data")
        exemplars = []
        for j in range(m):
            per_t = [flat[off[j * n + t] : off[j * n + t + 1]] for t in range(n)]
            exemplars.append(np.stack(per_t, axis=1))
        cents = np.array(d["centroids"], dtype=np.float64).reshape(m, n, dim)
        return cls(tuple(exemplars), tuple(tuple(o) for o in d["owners"]), cents)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ReferenceBank":
        return cls.from_dict(json.loads(text))


def build_bank(sequences, m: int, ids=None) -> ReferenceBank:
    """Collect training sequences per class and average them per position.

    Parameters
    ----------
    sequences : list of (GridSequence or ndarray, int)
        Training sequence and its class index.
    m : int
        Number of classes; every class must appear.
    ids : list of str, optional
        Image id of each sequence, needed for leave-one-out exclusion.
        Defaults to the positional index as a string.
    """
    if ids is None:
        ids = [str(i) for i in range(len(sequences))]
    if len(ids) != len(sequences):
        raise ParameterError("ids and sequences differ in length")
    per_class = [[] for _ in range(m)]
    per_owner = [[] for _ in range(m)]
    shape = None
    for image_id, (seq, label) in zip(ids, sequences):
        f = seq.features if isinstance(seq, GridSequence) else np.asarray(seq, dtype=np.float64)
        if shape is None:
            shape = f.shape
        elif f.shape != shape:
            raise DimensionError(f"sequence {image_id!r} has shape {f.shape}, expected {shape}")
        if not 0 <= label < m:
            raise ParameterError(f"label {label} outside 0..{m - 1}")
        per_class[label].append(f)
        per_owner[label].append(str(image_id))
    missing = [j for j in range(m) if not per_class[j]]
    if missing:
        raise CoverageError(f"no training sequences for classes {missing}")
    exemplars = tuple(np.stack(rows) for rows in per_class)
    n, dim = shape
    cents = np.empty((m, n, dim))
    for j in range(m):
        for t in range(n):
            cents[j, t] = kmeans_fit(exemplars[j][:, t, :], 1)[0]
    return ReferenceBank(exemplars, tuple(tuple(o) for o in per_owner), cents)


def _nearest_distances(features: np.ndarray, bank: ReferenceBank, exclude_id) -> np.ndarray:
    """``(n, m)`` distances from each grid to the nearest same-position exemplar."""
    out = np.empty((features.shape[0], bank.m))
    for j in range(bank.m):
        ex = bank.exemplars[j]
        if exclude_id is not None:
            keep = np.array([o != exclude_id for o in bank.owners[j]])
            ex = ex[keep]
            if ex.shape[0] == 0:
                raise CoverageError(
                    f"class {j} has no exemplars left after excluding {exclude_id!r}"
                )
        diff = ex - features[None]
        out[:, j] = np.sqrt(np.einsum("ktd,ktd->kt", diff, diff)).min(axis=0)
    return out


def _features_of(seq, bank: ReferenceBank) -> np.ndarray:
    f = seq.features if isinstance(seq, GridSequence) else np.asarray(seq, dtype=np.float64)
    if f.ndim != 2 or f.shape != (bank.n, bank.dim):
        raise DimensionError(f"sequence shape {f.shape} does not match bank ({bank.n}, {bank.dim})")
    return f


def emission(x, t: int, bank: ReferenceBank, exclude_id=None) -> np.ndarray:
    """Class likelihoods of one grid vector ``x`` observed at position ``t``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (bank.dim,):
        raise DimensionError(f"expected a vector of length {bank.dim}, got shape {x.shape}")
    if not 0 <= t < bank.n:
        raise ParameterError(f"position {t} outside 0..{bank.n - 1}")
    d = np.empty(bank.m)
    for j in range(bank.m):
        ex = bank.exemplars[j][:, t, :]
        if exclude_id is not None:
            ex = ex[[o != exclude_id for o in bank.owners[j]]]
            if ex.shape[0] == 0:
                raise CoverageError(f"class {j} has no exemplars left after exclusion")
        d[j] = np.sqrt(((ex - x) ** 2).sum(axis=1)).min()
    return softmax_neg(d)


def emissions(seq, bank: ReferenceBank, exclude_id=None) -> np.ndarray:
    """Emission vectors for every position, shape ``(n, m)``."""
    return softmax_neg(_nearest_distances(_features_of(seq, bank), bank, exclude_id))


def transition(t: int, bank: ReferenceBank) -> np.ndarray:
    """Row-stochastic matrix ``P[k, j]`` from class ``k`` at ``t-1`` to class ``j`` at ``t``."""
    if not 1 <= t <= bank.n - 1:
        raise ParameterError(f"transition position {t} outside 1..{bank.n - 1}")
    prev = bank.centroids[:, t - 1, :]
    cur = bank.centroids[:, t, :]
    d = np.sqrt(((prev[:, None, :] - cur[None, :, :]) ** 2).sum(axis=2))
    return softmax_neg(d)


def forward(seq, bank: ReferenceBank, exclude_id=None) -> np.ndarray:
    """Normalized forward recursion; returns the ``(n, m)`` alpha matrix.

    ``alpha[0]`` is the emission at position 0 under a uniform prior. Each
    later row is ``emission_t * (alpha[t-1] @ P_t)``, rescaled to sum 1.
    """
    E = emissions(seq, bank, exclude_id)
    T = bank.transitions()
    alpha = np.empty_like(E)
    a = E[0] / bank.m
    alpha[0] = a / a.sum()
    for t in range(1, bank.n):
        a = E[t] * (alpha[t - 1] @ T[t])
        alpha[t] = a / a.sum()
    return alpha


def feature_vector(alpha) -> np.ndarray:
    """Class-major layout: ``v[j * n + t] = alpha[t, j]``."""
    return np.ascontiguousarray(np.asarray(alpha, dtype=np.float64).T).ravel()


def hmm_features(seq, bank: ReferenceBank, exclude_id=None) -> np.ndarray:
    return feature_vector(forward(seq, bank, exclude_id))


def write_vectors(path, descriptor_id: str, records) -> None:
    """Write ``(image_id, vector)`` pairs as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, v in records:
            fh.write(json.dumps({"id": image_id, "descriptor": descriptor_id,
                                 "v": np.asarray(v).tolist()}) + "\n")


def read_vectors(path) -> tuple:
    """Return ``(descriptor_id, ids, (N, D) array)``."""
    ids, rows, desc = [], [], None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ids.append(rec["id"])
                rows.append(rec["v"])
                desc = rec["descriptor"]
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad feature record") from exc
    return desc, ids, np.array(rows, dtype=np.float64)
