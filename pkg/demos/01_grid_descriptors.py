"""
Encoding an image as a grid sequence
====================================

An image is cut into a g x g lattice of regions. Each region gets one
descriptor vector, and the vectors are read out in JPEG zigzag order so
that neighbours in the sequence are neighbours in the image.
"""

import math

import numpy as np

from scenehmm import GrayImage, encode, zigzag
from scenehmm.descriptors import build_gabor_bank, census_codes, gabor_feat, partition
from scenehmm.synthetic import grating

# A 64x64 grating tilted by 45 degrees, with a little noise.
pixels = grating(64, math.pi / 4, 8.0, 0.0, noise=10.0, rng=0)
image = GrayImage(pixels)

# The lattice and the order in which its cells are visited.
g = 3
print("regions (row0, row1, col0, col1):", partition(pixels, g)[:3], "...")
print("zigzag order for g=3:", zigzag(g))

# Each descriptor has a fixed length per region, whatever the region size.
for name, grid in [("sift", 7), ("gist", 3), ("centrist", 5), ("gabor", 3)]:
    seq = encode(image, name, grid)
    print(f"{name:9s} g={grid}: sequence of {seq.n} vectors of length {seq.d}")

# Census codes compare each pixel with its 8 neighbours. A flat patch sets
# every bit, a local minimum clears every bit.
patch = np.full((3, 3), 10)
patch[1, 1] = 3
print("census code of a local minimum:", census_codes(patch)[0, 0])

# Gabor energy peaks at the filter matching the grating's orientation.
bank = build_gabor_bank(5, 8, 4.0)
means = gabor_feat(grating(64, 2 * math.pi / 8, 8.0, 0.0, noise=0.0), bank)[0::2]
print("strongest orientation at wavelength 8:", int(np.argmax(means.reshape(5, 8)[1])), "of 8")
