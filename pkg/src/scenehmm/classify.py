"""One-vs-rest RBF SVMs trained by SMO, with Platt-calibrated probabilities.

The dual solved for each binary machine is::

    min_a  1/2 a'Qa - e'a   s.t.  0 <= a_i <= c,  y'a = 0,   Q_ij = y_i y_j K_ij

Platt probabilities use the convention ``P(+1 | f) = 1 / (1 + exp(a f + b))``
so a correctly oriented machine has ``a < 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, DimensionError, ParameterError

TAU = 1e-12


@dataclass(frozen=True)
class KernelParams:
    """RBF width ``gamma``, box constraint ``c``, KKT tolerance and pass guard.

    ``gamma=None`` means "pick from the data" (see :func:`default_gamma`).
    """

    gamma: float | None = None
    c: float = 10.0
    tol: float = 1e-3
    max_passes: int = 200

    def __post_init__(self):
        if self.gamma is not None and not self.gamma > 0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma}")
        if not self.c > 0:
            raise ParameterError(f"c must be > 0, got {self.c}")
        if not 0 < self.tol <= 0.1:
            raise ParameterError(f"tol must lie in (0, 0.1], got {self.tol}")
        if self.max_passes < 1:
            raise ParameterError("max_passes must be >= 1")


def rbf(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"kernel arguments have shapes {x.shape} and {y.shape}")
    d = x - y
    return math.exp(-gamma * float(d @ d))


def rbf_matrix(X, Y, gamma: float) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"feature dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
    sq = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def default_gamma(X, seed: int = 0, pairs: int = 100) -> float:
    """``1 / (D * median squared distance)`` over randomly sampled pairs."""
    X = np.asarray(X, dtype=np.float64)
    n, D = X.shape
    rng = np.random.default_rng(seed)
    i = rng.integers(n, size=pairs)
    j = rng.integers(n, size=pairs)
    keep = i != j
    sq = ((X[i[keep]] - X[j[keep]]) ** 2).sum(axis=1)
    med = float(np.median(sq)) if sq.size else 0.0
    return 1.0 / (D * med) if med > 0 else 1.0 / D


# ---------------------------------------------------------------------------
# SMO
# ---------------------------------------------------------------------------


@dataclass
class SmoResult:
    alphas: np.ndarray
    bias: float
    converged: bool
    iterations: int
    kkt_violation: float


def _violating_pair(alpha, y, G, c):
    """Indices of the maximal violating pair and the gap ``m - M``."""
    minus_yG = -y * G
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    if not up.any() or not low.any():
        return -1, -1, 0.0
    vu = np.where(up, minus_yG, -np.inf)
    vl = np.where(low, minus_yG, np.inf)
    i = int(np.argmax(vu))
    j = int(np.argmin(vl))
    return i, j, float(vu[i] - vl[j])


def kkt_violation(gram, labels, alphas, c: float) -> float:
    """Largest KKT gap ``max_{I_up} -yG - min_{I_low} -yG`` (clipped at 0)."""
    y = np.asarray(labels, dtype=np.float64)
    a = np.asarray(alphas, dtype=np.float64)
    G = y * (np.asarray(gram) @ (a * y)) - 1.0
    return max(0.0, _violating_pair(a, y, G, c)[2])


def smo_train(gram, labels, params: KernelParams) -> SmoResult:
    """Solve the binary dual on a precomputed kernel matrix.

    The working set is the maximal violating pair; ties go to the lowest
    index. Stops once the KKT gap is below ``params.tol`` or after
    ``params.max_passes * N`` updates, in which case ``converged`` is False.
    The bias is the mean over free support vectors, or the midpoint of the
    feasible interval when there are none.
    """
    K = np.asarray(gram, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    N = y.shape[0]
    if K.shape != (N, N):
        raise DimensionError(f"gram matrix shape {K.shape} does not match {N} labels")
    if not np.all(np.abs(y) == 1):
        raise ParameterError("labels must be +1 or -1")
    if not ((y > 0).any() and (y < 0).any()):
        raise ParameterError("both classes must be present")
    c = float(params.c)
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(N)
    G = -np.ones(N)
    max_iter = params.max_passes * max(N, 1)
    converged = False
    it = 0
    gap = math.inf
    while it < max_iter:
        i, j, gap = _violating_pair(alpha, y, G, c)
        if i < 0 or gap < params.tol:
            converged = True
            break
        it += 1
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(QD[i] + QD[j] + 2.0 * Q[i, j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, c - diff
            elif alpha[j] > c:
                alpha[j], alpha[i] = c, c + diff
        else:
            quad = max(QD[i] + QD[j] - 2.0 * Q[i, j], TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, total - c
                if alpha[j] > c:
                    alpha[j], alpha[i] = c, total - c
            else:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, total
                if alpha[i] < 0:
                    alpha[i], alpha[j] = 0.0, total
        G += Q[:, i] * (alpha[i] - ai) + Q[:, j] * (alpha[j] - aj)
    else:
        gap = _violating_pair(alpha, y, G, c)[2]

    yG = y * G
    free = (alpha > 0) & (alpha < c)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub, lb = math.inf, -math.inf
        for t in range(N):
            at_upper = alpha[t] >= c
            at_lower = alpha[t] <= 0
            if (at_upper and y[t] < 0) or (at_lower and y[t] > 0):
                ub = min(ub, yG[t])
            else:
                lb = max(lb, yG[t])
        rho = (ub + lb) / 2.0 if math.isfinite(ub) and math.isfinite(lb) else 0.0
    return SmoResult(alpha, -rho, converged, it, max(0.0, gap))


# ---------------------------------------------------------------------------
# Platt scaling
# ---------------------------------------------------------------------------


def _platt_loss(f, t, A, B):
    z = f * A + B
    return float(np.sum(t * z + np.logaddexp(0.0, -z)))


def platt_fit(decision_values, labels, max_iter: int = 100) -> tuple:
    """Fit ``P(+1|f) = 1/(1+exp(a f + b))`` by Newton's method.

    Targets are smoothed to ``(N+ + 1)/(N+ + 2)`` and ``1/(N- + 2)``; a small
    ridge keeps the Hessian invertible; steps are halved until the
    sufficient-decrease condition holds.

    Raises
    ------
    ConvergenceError
        If the gradient is not below 1e-5 after ``max_iter`` iterations.
    """
    f = np.asarray(decision_values, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int((y > 0).sum())
    n_neg = int((y <= 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ParameterError("Platt scaling needs both classes")
    hi, lo = (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0)
    t = np.where(y > 0, hi, lo)
    A, B = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = _platt_loss(f, t, A, B)
    sigma, eps, min_step = 1e-12, 1e-5, 1e-10
    for _ in range(max_iter):
        z = f * A + B
        p = expit(-z)
        q = expit(z)
        d2 = p * q
        h11 = sigma + float((f * f * d2).sum())
        h22 = sigma + float(d2.sum())
        h21 = float((f * d2).sum())
        d1 = t - p
        g1 = float((f * d1).sum())
        g2 = float(d1.sum())
        if abs(g1) < eps and abs(g2) < eps:
            return A, B
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= min_step:
            nA, nB = A + step * dA, B + step * dB
            nf = _platt_loss(f, t, nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        else:
            # no further decrease possible at machine precision
            return A, B
    raise ConvergenceError(f"Platt scaling did not converge in {max_iter} iterations")


def platt_prob(f, a: float, b: float) -> np.ndarray:
    return expit(-(a * np.asarray(f, dtype=np.float64) + b))


# ---------------------------------------------------------------------------
# Machines
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BinarySvm:
    support_vectors: np.ndarray
    dual_coeffs: np.ndarray
    bias: float
    gamma: float
    platt_a: float = 0.0
    platt_b: float = 0.0
    converged: bool = True
    kkt: float = 0.0

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.support_vectors.shape[1]:
            raise DimensionError(
                f"expected dimension {self.support_vectors.shape[1]}, got {X.shape[-1]}"
            )
        return rbf_matrix(X, self.support_vectors, self.gamma) @ self.dual_coeffs + self.bias

    def to_dict(self) -> dict:
        return {
            "dim": int(self.support_vectors.shape[1]),
            "support_vectors": self.support_vectors.ravel().tolist(),
            "dual_coeffs": self.dual_coeffs.tolist(),
            "bias": self.bias,
            "gamma": self.gamma,
            "platt_a": self.platt_a,
            "platt_b": self.platt_b,
            "converged": self.converged,
            "kkt": self.kkt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinarySvm":
        sv = np.array(d["support_vectors"], dtype=np.float64).reshape(-1, d["dim"])
        return cls(sv, np.array(d["dual_coeffs"], dtype=np.float64), float(d["bias"]),
                   float(d["gamma"]), float(d["platt_a"]), float(d["platt_b"]),
                   bool(d["converged"]), float(d["kkt"]))


def train_binary(X, y, params: KernelParams, gamma: float, gram=None) -> BinarySvm:
    """Fit one machine (no calibration) and keep only its support vectors."""
    X = np.asarray(X, dtype=np.float64)
    K = rbf_matrix(X, X, gamma) if gram is None else gram
    res = smo_train(K, y, params)
    sv = res.alphas > 0
    return BinarySvm(X[sv].copy(), (res.alphas * np.asarray(y, dtype=np.float64))[sv],
                     res.bias, gamma, converged=res.converged, kkt=res.kkt_violation)


def stratified_folds(y, k: int, seed: int) -> np.ndarray:
    """Fold index per sample; each label is dealt round-robin after a seeded shuffle."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    for label in np.unique(y):
        idx = np.flatnonzero(y == label)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = np.arange(len(idx)) % k
    return folds


@dataclass(frozen=True, eq=False)
class OvrClassifier:
    """``m`` one-vs-rest machines; ``machines[j]`` separates class ``j``."""

    machines: tuple
    dim: int
    descriptor_id: str = ""

    @property
    def m(self) -> int:
        return len(self.machines)

    def to_dict(self) -> dict:
        return {"descriptor": self.descriptor_id, "dim": self.dim,
                "machines": [mc.to_dict() for mc in self.machines]}

    @classmethod
    def from_dict(cls, d: dict) -> "OvrClassifier":
        return cls(tuple(BinarySvm.from_dict(x) for x in d["machines"]), int(d["dim"]),
                   d.get("descriptor", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "OvrClassifier":
        return cls.from_dict(json.loads(text))

    @property
    def converged(self) -> bool:
        return all(mc.converged for mc in self.machines)


def ovr_train(features, labels, params: KernelParams | None = None,
              descriptor_id: str = "", seed: int = 0, folds: int = 3) -> OvrClassifier:
    """Train class-vs-rest machines and calibrate each on out-of-fold scores.

    Calibration decision values come from ``folds`` stratified splits: each
    sample is scored by a machine that never saw it.
    """
    params = params or KernelParams()
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != labels.shape[0]:
        raise DimensionError("features must be (N, D) with one label per row")
    m = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=m)
    if m < 2 or (counts < 2).any():
        raise ParameterError(f"every class needs >= 2 samples; counts = {counts.tolist()}")
    gamma = params.gamma if params.gamma is not None else default_gamma(X, seed)
    K = rbf_matrix(X, X, gamma)
    machines = []
    for j in range(m):
        y = np.where(labels == j, 1.0, -1.0)
        full = train_binary(X, y, params, gamma, gram=K)
        fold = stratified_folds(y, folds, seed + j)
        oof = np.empty(len(y))
        for k in range(folds):
            tr, te = fold != k, fold == k
            if not te.any():
                continue
            sub = train_binary(X[tr], y[tr], params, gamma, gram=K[np.ix_(tr, tr)])
            oof[te] = sub.decision(X[te])
        a, b = platt_fit(oof, y)
        machines.append(BinarySvm(full.support_vectors, full.dual_coeffs, full.bias, gamma,
                                  a, b, full.converged, full.kkt))
    return OvrClassifier(tuple(machines), X.shape[1], descriptor_id)


def decision_values(clf: OvrClassifier, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != clf.dim:
        raise DimensionError(f"expected dimension {clf.dim}, got {X.shape[1]}")
    return np.column_stack([mc.decision(X) for mc in clf.machines])


def predict_proba(clf: OvrClassifier, X) -> np.ndarray:
    """Normalized per-class sigmoid scores; one row per input vector.

    A single vector input returns a single row.
    """
    single = np.asarray(X).ndim == 1
    F = decision_values(clf, X)
    P = np.column_stack([platt_prob(F[:, j], mc.platt_a, mc.platt_b)
                         for j, mc in enumerate(clf.machines)])
    tot = P.sum(axis=1, keepdims=True)
    out = np.where(P.max(axis=1, keepdims=True) < 1e-12, 1.0 / clf.m,
                   P / np.where(tot > 0, tot, 1.0))
    return out[0] if single else out
