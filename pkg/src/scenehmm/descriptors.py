"""Grid partitioning, zigzag ordering and per-grid descriptors.

An image is cut into ``g x g`` non-overlapping regions, each region is
described by one of four fixed-length vectors, and the vectors are ordered
along the JPEG zigzag path so that consecutive observations are spatial
neighbours.

=========  ======  ==========================================================
id         dim     content
=========  ======  ==========================================================
sift       128     4x4 cells x 8 gradient-orientation bins, clamped at 0.2
gist       32      mean Gabor magnitude, 4 scales x 8 orientations
centrist   256     normalized census-transform histogram
gabor      80      mean and variance of Gabor magnitude, 5 scales x 8 orient.
=========  ======  ==========================================================
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .errors import DimensionError, FormatError, ParameterError
from .imaging import GrayImage

DESCRIPTORS = ("sift", "gist", "centrist", "gabor")

GABOR_SCALES = 5
GIST_SCALES = 4
ORIENTATIONS = 8
BASE_WAVELENGTH = 4.0
SIGMA_PER_WAVELENGTH = 0.56
SIFT_CELLS = 4
SIFT_BINS = 8
SIFT_CLAMP = 0.2


def descriptor_dim(descriptor_id: str, scales: int | None = None,
                   orientations: int = ORIENTATIONS) -> int:
    if descriptor_id == "sift":
        return SIFT_CELLS * SIFT_CELLS * SIFT_BINS
    if descriptor_id == "centrist":
        return 256
    if descriptor_id == "gist":
        return (scales or GIST_SCALES) * orientations
    if descriptor_id == "gabor":
        return 2 * (scales or GABOR_SCALES) * orientations
    raise ParameterError(f"unknown descriptor {descriptor_id!r}")


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


def _cuts(length: int, g: int) -> list:
    step = length // g
    edges = [i * step for i in range(g)] + [length]
    return list(zip(edges[:-1], edges[1:]))


def partition(image, g: int) -> list:
    """Split an image into ``g*g`` rectangles, raster-indexed ``r*g + c``.

    Each rectangle is ``(row0, row1, col0, col1)`` with exclusive upper
    bounds. Sides are ``floor(size / g)``; the last row and column absorb
    the remainder.
    """
    pixels = image.pixels if isinstance(image, GrayImage) else np.asarray(image)
    h, w = pixels.shape
    if g < 1:
        raise ParameterError(f"grid count must be >= 1, got {g}")
    if h < 2 * g or w < 2 * g:
        raise DimensionError(f"{w}x{h} image is too small for a {g}x{g} grid")
    rows, cols = _cuts(h, g), _cuts(w, g)
    return [(r0, r1, c0, c1) for r0, r1 in rows for c0, c1 in cols]


def zigzag(g: int) -> list:
    """JPEG zigzag order of a ``g x g`` lattice as raster indices.

    >>> zigzag(3)
    [0, 1, 3, 6, 4, 2, 5, 7, 8]
    """
    if g < 1:
        raise ParameterError(f"grid count must be >= 1, got {g}")
    order = []
    for d in range(2 * g - 1):
        lo, hi = max(0, d - g + 1), min(d, g - 1)
        rows = range(hi, lo - 1, -1) if d % 2 == 0 else range(lo, hi + 1)
        order.extend(r * g + (d - r) for r in rows)
    return order


# ---------------------------------------------------------------------------
# Centrist
# ---------------------------------------------------------------------------

_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def census_codes(region) -> np.ndarray:
    """8-bit census code of every interior pixel.

    Bit order is MSB-first over the neighbours in raster order; a bit is set
    when the centre is >= that neighbour.
    """
    a = np.asarray(region, dtype=np.int16)
    h, w = a.shape
    if h < 3 or w < 3:
        raise DimensionError(f"census transform needs a 3x3 region, got {w}x{h}")
    centre = a[1:-1, 1:-1]
    codes = np.zeros(centre.shape, dtype=np.int32)
    for dr, dc in _NEIGHBOURS:
        neigh = a[1 + dr : h - 1 + dr, 1 + dc : w - 1 + dc]
        codes = (codes << 1) | (centre >= neigh)
    return codes


def centrist(region) -> np.ndarray:
    """256-bin census histogram, L1-normalized."""
    codes = census_codes(region)
    hist = np.bincount(codes.ravel(), minlength=256).astype(np.float64)
    return hist / hist.sum()


# ---------------------------------------------------------------------------
# Gabor filtering
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaborBank:
    """Complex Gabor kernels, scale-major: filter ``s * O + k``."""

    kernels: tuple
    wavelengths: np.ndarray
    orientations: np.ndarray
    sigmas: np.ndarray
    _spectra: OrderedDict = field(default_factory=OrderedDict, repr=False)

    @property
    def scales(self) -> int:
        return len(self.wavelengths)

    @property
    def n_orientations(self) -> int:
        return len(self.orientations)

    def __len__(self):
        return len(self.kernels)

    def scale_radius(self, s: int) -> int:
        return self.kernels[s * self.n_orientations].shape[0] // 2

    def spectra(self, shape: tuple, s: int) -> np.ndarray:
        """FFTs of scale ``s`` kernels embedded top-left in a ``shape`` array."""
        key = (shape, s)
        cached = self._spectra.get(key)
        if cached is not None:
            self._spectra.move_to_end(key)
            return cached
        O = self.n_orientations
        side = 2 * self.scale_radius(s) + 1
        big = np.zeros((O,) + shape, dtype=np.complex128)
        for i, k in enumerate(self.kernels[s * O : (s + 1) * O]):
            big[i, :side, :side] = k
        spec = sfft.fft2(big, axes=(-2, -1))
        self._spectra[key] = spec
        while len(self._spectra) > 8 * self.scales:
            self._spectra.popitem(last=False)
        return spec


def gabor_kernel(wavelength: float, theta: float, sigma: float) -> np.ndarray:
    """Zero-DC complex Gabor kernel of side ``2*ceil(3*sigma) + 1``.

    The Gaussian envelope is normalized to unit sum so that responses are
    comparable across scales.
    """
    r = int(math.ceil(3 * sigma))
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    xr = x * math.cos(theta) + y * math.sin(theta)
    env = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    env /= env.sum()
    carrier = np.exp(2j * math.pi * xr / wavelength)
    k = env * carrier
    return (k.real - k.real.mean()) + 1j * (k.imag - k.imag.mean())


@lru_cache(maxsize=8)
def build_gabor_bank(scales: int, orientations: int,
                     base_wavelength: float = BASE_WAVELENGTH) -> GaborBank:
    """Bank with wavelengths ``base * 2**s`` and angles ``k * pi / O``."""
    if scales < 1 or orientations < 1:
        raise ParameterError("Gabor bank needs at least one scale and one orientation")
    if base_wavelength < 2:
        raise ParameterError(f"base wavelength must be >= 2 pixels, got {base_wavelength}")
    lambdas = base_wavelength * 2.0 ** np.arange(scales)
    thetas = np.arange(orientations) * math.pi / orientations
    kernels, sigmas = [], []
    for lam in lambdas:
        sigma = SIGMA_PER_WAVELENGTH * lam
        for th in thetas:
            kernels.append(gabor_kernel(lam, th, sigma))
            sigmas.append(sigma)
    return GaborBank(tuple(kernels), lambdas, thetas, np.array(sigmas))


def gabor_responses(region, bank: GaborBank) -> np.ndarray:
    """Complex responses of every filter, shape ``(len(bank), h, w)``.

    Per scale, the region is replicate-padded by that scale's kernel radius
    ``R``. A circular convolution at a length of at least ``h + 2R``
    reproduces the linear convolution on the ``h x w`` window of interest.
    """
    a = np.asarray(region, dtype=np.float64)
    h, w = a.shape
    out = []
    for s in range(bank.scales):
        R = bank.scale_radius(s)
        padded = np.pad(a, R, mode="edge")
        shape = (sfft.next_fast_len(h + 2 * R), sfft.next_fast_len(w + 2 * R))
        spec = sfft.fft2(padded, s=shape)
        resp = sfft.ifft2(spec[None] * bank.spectra(shape, s), axes=(-2, -1))
        out.append(resp[:, 2 * R : 2 * R + h, 2 * R : 2 * R + w])
    return np.concatenate(out)


def gabor_feat(region, bank: GaborBank) -> np.ndarray:
    """Mean and variance of the response magnitude, interleaved per filter."""
    mag = np.abs(gabor_responses(region, bank))
    mean = mag.mean(axis=(1, 2))
    var = mag.var(axis=(1, 2))
    return np.column_stack([mean, var]).ravel()


def gist_feat(region, bank: GaborBank) -> np.ndarray:
    """Mean response magnitude per filter (energy only)."""
    return np.abs(gabor_responses(region, bank)).mean(axis=(1, 2))


# ---------------------------------------------------------------------------
# SIFT-style gradient histogram
# ---------------------------------------------------------------------------


def _sift_histogram(region) -> np.ndarray:
    a = np.asarray(region, dtype=np.float64)
    h, w = a.shape
    if h < 2 * SIFT_CELLS or w < 2 * SIFT_CELLS:
        raise DimensionError(f"SIFT needs an 8x8 region, got {w}x{h}")
    p = np.pad(a, 1, mode="edge")
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2 * math.pi)
    bins = np.minimum((ang / (2 * math.pi / SIFT_BINS)).astype(np.int64), SIFT_BINS - 1)
    rc = np.repeat(np.arange(SIFT_CELLS), np.diff([c[0] for c in _cuts(h, SIFT_CELLS)] + [h]))
    cc = np.repeat(np.arange(SIFT_CELLS), np.diff([c[0] for c in _cuts(w, SIFT_CELLS)] + [w]))
    cell = rc[:, None] * SIFT_CELLS + cc[None, :]
    idx = (cell * SIFT_BINS + bins).ravel()
    return np.bincount(idx, weights=mag.ravel(), minlength=SIFT_CELLS**2 * SIFT_BINS)


def _normalize_clamp(hist: np.ndarray) -> tuple:
    """Return (clamped, final): the clamped unit vector and its renormalization."""
    norm = np.linalg.norm(hist)
    if norm <= 1e-12:
        z = np.zeros_like(hist)
        return z, z
    clamped = np.minimum(hist / norm, SIFT_CLAMP)
    return clamped, clamped / np.linalg.norm(clamped)


def sift_feat(region) -> np.ndarray:
    """128-d gradient-orientation histogram over a 4x4 cell layout.

    Central differences, hard binning over [0, 2*pi), magnitude weighting,
    then L2-normalize, clamp at 0.2 and renormalize. A flat region maps to
    the zero vector.
    """
    return _normalize_clamp(_sift_histogram(region))[1]


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridSequence:
    """Per-grid descriptor vectors of one image, shape ``(g*g, d)``, zigzag order."""

    descriptor_id: str
    g: int
    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] != self.g * self.g:
            raise DimensionError(
                f"expected {self.g * self.g} grid vectors, got array of shape {f.shape}"
            )
        object.__setattr__(self, "features", f)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GridSequence):
            return NotImplemented
        return (
            self.descriptor_id == other.descriptor_id
            and self.g == other.g
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


def default_bank(descriptor_id: str) -> GaborBank | None:
    if descriptor_id == "gist":
        return build_gabor_bank(GIST_SCALES, ORIENTATIONS, BASE_WAVELENGTH)
    if descriptor_id == "gabor":
        return build_gabor_bank(GABOR_SCALES, ORIENTATIONS, BASE_WAVELENGTH)
    return None


def describe(region, descriptor_id: str, bank: GaborBank | None = None) -> np.ndarray:
    if descriptor_id == "sift":
        return sift_feat(region)
    if descriptor_id == "centrist":
        return centrist(region)
    if descriptor_id in ("gist", "gabor"):
        bank = bank if bank is not None else default_bank(descriptor_id)
        return gist_feat(region, bank) if descriptor_id == "gist" else gabor_feat(region, bank)
    raise ParameterError(f"unknown descriptor {descriptor_id!r}")


def encode(image: GrayImage, descriptor_id: str, g: int,
           bank: GaborBank | None = None) -> GridSequence:
    """Describe every grid of ``image`` and return them in zigzag order."""
    if descriptor_id not in DESCRIPTORS:
        raise ParameterError(f"unknown descriptor {descriptor_id!r}")
    pixels = image.pixels
    regions = partition(image, g)
    vecs = [describe(pixels[r0:r1, c0:c1], descriptor_id, bank) for r0, r1, c0, c1 in regions]
    order = zigzag(g)
    return GridSequence(descriptor_id, g, np.stack([vecs[i] for i in order]))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def sequence_record(image_id: str, seq: GridSequence) -> str:
    return json.dumps(
        {"id": image_id, "descriptor": seq.descriptor_id, "g": seq.g,
         "features": seq.features.tolist()}
    )


def write_sequences(path, records) -> None:
    """Write ``(image_id, GridSequence)`` pairs as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, seq in records:
            fh.write(sequence_record(image_id, seq) + "\n")


def read_sequences(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                seq = GridSequence(rec["descriptor"], int(rec["g"]), np.array(rec["features"]))
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad grid-sequence record") from exc
            out.append((rec["id"], seq))
    return out
