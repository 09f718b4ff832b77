"""Synthetic oriented-grating scenes for smoke tests and demos."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .imaging import GrayImage, LabeledImageSet, LabeledItem, encode_pgm


def grating(size: int, theta: float, wavelength: float, phase: float,
            contrast: float = 60.0, noise: float = 20.0, rng=None) -> np.ndarray:
    """Sinusoidal grating around mid-gray plus Gaussian noise, as uint8."""
    rng = np.random.default_rng(rng)
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    u = x * math.cos(theta) + y * math.sin(theta)
    img = 128.0 + contrast * np.cos(2 * math.pi * u / wavelength + phase)
    img += rng.normal(0.0, noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def grating_dataset(n_classes: int = 4, per_class: int = 80, size: int = 64,
                    seed: int = 0, noise: float = 20.0,
                    wavelength_range=(6.0, 12.0)) -> LabeledImageSet:
    """Class ``k`` holds gratings at orientation ``k * pi / n_classes``.

    Wavelength and phase are drawn per image, so classes differ only in
    orientation.
    """
    rng = np.random.default_rng(seed)
    names = [f"orient{k * 180 // n_classes:03d}" for k in range(n_classes)]
    items = []
    for k, name in enumerate(names):
        theta = k * math.pi / n_classes
        for i in range(per_class):
            lam = rng.uniform(*wavelength_range)
            phase = rng.uniform(0, 2 * math.pi)
            px = grating(size, theta, lam, phase, noise=noise, rng=rng)
            items.append(LabeledItem(f"{name}/img{i:03d}.pgm", k, GrayImage(px)))
    return LabeledImageSet(items, names)


def write_dataset(dataset: LabeledImageSet, root) -> Path:
    """Write a dataset as ``root/<class>/<file>.pgm``."""
    root = Path(root)
    for it in dataset.items:
        path = root / it.id
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_pgm(it.image))
    return root
