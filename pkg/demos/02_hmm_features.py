"""
HMM features from a reference bank
==================================

Training sequences of each class form a reference bank. A query sequence
is scored position by position: emissions favour the class whose nearest
exemplar at that position is closest, transitions favour moving between
nearby class centroids. The normalized forward probabilities, laid out
class-major, are the feature vector.
"""

import numpy as np

from scenehmm import build_bank, feature_vector, forward
from scenehmm.hmm import emissions

rng = np.random.default_rng(0)
m, n, dim = 3, 9, 4

# Each class is a noisy copy of its own prototype sequence.
prototypes = rng.normal(size=(m, n, dim)) * 2
train, ids = [], []
for j in range(m):
    for i in range(5):
        train.append((prototypes[j] + rng.normal(0, 0.5, (n, dim)), j))
        ids.append(f"class{j}/img{i}")
bank = build_bank(train, m, ids)

# A fresh sample of class 1.
query = prototypes[1] + rng.normal(0, 0.5, (n, dim))
alpha = forward(query, bank)
print("emission at position 0:", np.round(emissions(query, bank)[0], 3))
print("forward probabilities at the last position:", np.round(alpha[-1], 3))

v = feature_vector(alpha)
print("feature length m*n =", v.size)
print("every position sums to one:", np.allclose(v.reshape(m, n).sum(0), 1))

# For a training image, its own grids are left out of the bank so that a
# zero distance to itself cannot inflate the score.
x, _ = train[0]
print("with self   :", np.round(forward(x, bank)[0], 3))
print("leave-one-out:", np.round(forward(x, bank, exclude_id=ids[0])[0], 3))
