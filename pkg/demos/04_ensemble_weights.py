"""
Convex weights for combining classifiers
========================================

Given per-classifier probability scores on the training set, the weights
minimize the summed Euclidean distance between the weighted scores and the
one-hot labels, subject to lying on the probability simplex.
"""

import numpy as np

from scenehmm import fuse, solve_weights
from scenehmm.ensemble import objective, one_hot, simplex_project

rng = np.random.default_rng(2)
N, m = 60, 4
labels = rng.integers(0, m, N)
D = one_hot(labels, m)


def noisy(quality):
    """Scores that put extra mass on the true class."""
    raw = rng.dirichlet(np.ones(m), size=N) + quality * D
    return raw / raw.sum(1, keepdims=True)


S = np.stack([noisy(1.5), noisy(0.8), noisy(0.2)])
sol = solve_weights(S, D, iters=2000)
print("weights:", np.round(sol.w, 3))
print("objective:", round(sol.objective, 4))
for name, val in sol.baselines.items():
    print(f"  {name:9s} {val:.4f}")

# Projection onto the simplex.
print("project (1.2, -0.2) ->", simplex_project([1.2, -0.2]))

# Fusing a single image: weighted sum, then argmax with ties to the lowest index.
fused, label = fuse(np.array([[0.8, 0.2], [0.2, 0.8]]), [0.5, 0.5])
print("tie example:", fused, "label", label)
_, pred = fuse(S, sol.w)
print("fused training accuracy:", (pred == labels).mean(),
      "vs uniform objective", round(objective(np.full(3, 1 / 3), S, D), 4))
