"""Grayscale image decoding, dataset loading and train/test splits.

Only binary/ASCII PGM and 8-bit non-interlaced PNG are understood. JPEG
sources must be converted beforehand.
"""

from __future__ import annotations

import json
import re
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    DatasetError,
    DatasetWarning,
    DimensionError,
    FormatError,
    ParameterError,
    TruncationError,
    UnsupportedDepthError,
    UnsupportedFormatError,
)

MIN_SIDE = 16
IMAGE_SUFFIXES = (".pgm", ".png")


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit luminance image stored as a ``(height, width)`` uint8 array."""

    pixels: np.ndarray
    min_side: int = field(default=MIN_SIDE, repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise DimensionError(f"expected a 2-D pixel array, got shape {px.shape}")
        h, w = px.shape
        if h < self.min_side or w < self.min_side:
            raise DimensionError(
                f"image is {w}x{h}; both sides must be at least {self.min_side}"
            )
        px = np.ascontiguousarray(px, dtype=np.uint8)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(#[^\n\r]*[\n\r]?)|(\S+)")


def _pgm_tokens(data: bytes, count: int, start: int = 0):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the last token.
    """
    tokens = []
    pos = start
    while len(tokens) < count:
        m = _PGM_TOKEN.search(data, pos)
        if m is None:
            raise FormatError("PGM header ended prematurely")
        pos = m.end()
        if m.group(2) is not None:
            tokens.append(m.group(2))
    return tokens, pos


def decode_pgm(data: bytes, min_side: int = MIN_SIDE) -> GrayImage:
    """Decode a P5 (binary) or P2 (ASCII) PGM file.

    Parameters
    ----------
    data : bytes
        Raw file contents.
    min_side : int
        Smallest accepted width/height. Descriptors need at least 16.

    Raises
    ------
    FormatError
        Bad magic number or non-numeric header fields.
    UnsupportedDepthError
        ``maxval`` above 255.
    TruncationError
        Fewer samples than ``width * height``.
    DimensionError
        Image smaller than ``min_side`` on either side.
    """
    data = bytes(data)
    if data[:2] not in (b"P5", b"P2"):
        raise FormatError("not a PGM file (expected P5 or P2 magic)")
    magic = data[:2]
    tokens, pos = _pgm_tokens(data, 3, 2)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"non-numeric PGM header field: {tokens}") from exc
    if width <= 0 or height <= 0 or maxval <= 0:
        raise FormatError(f"invalid PGM header values {width} {height} {maxval}")
    if maxval > 255:
        raise UnsupportedDepthError(f"maxval {maxval} > 255 is not supported")
    count = width * height

    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        body = data[pos + 1 : pos + 1 + count]
        if len(body) < count:
            raise TruncationError(f"expected {count} pixel bytes, found {len(body)}")
        pixels = np.frombuffer(body, dtype=np.uint8)
    else:
        values = re.findall(rb"\d+", re.sub(rb"#[^\n\r]*", b"", data[pos:]))
        if len(values) < count:
            raise TruncationError(f"expected {count} ASCII samples, found {len(values)}")
        pixels = np.array([int(v) for v in values[:count]], dtype=np.int64)
        if pixels.max(initial=0) > maxval:
            raise FormatError("sample exceeds maxval")
        pixels = pixels.astype(np.uint8)

    return GrayImage(pixels.reshape(height, width), min_side=min_side)


def encode_pgm(image: GrayImage) -> bytes:
    """Serialize to binary P5."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.pixels.tobytes()


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


def _png_chunks(data: bytes):
    pos = len(_PNG_MAGIC)
    while pos < len(data):
        if pos + 8 > len(data):
            raise TruncationError("PNG chunk header truncated")
        length, ctype = struct.unpack(">I4s", data[pos : pos + 8])
        body = data[pos + 8 : pos + 8 + length]
        crc_bytes = data[pos + 8 + length : pos + 12 + length]
        if len(body) < length or len(crc_bytes) < 4:
            raise TruncationError(f"PNG chunk {ctype!r} truncated")
        (crc,) = struct.unpack(">I", crc_bytes)
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise CorruptionError(f"CRC mismatch in PNG chunk {ctype!r}")
        yield ctype, body
        if ctype == b"IEND":
            return
        pos += 12 + length
    raise TruncationError("PNG stream has no IEND chunk")


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = np.abs(p - a), np.abs(p - b), np.abs(p - c)
    return np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    expected = height * (stride + 1)
    if len(raw) < expected:
        raise TruncationError(f"PNG image data holds {len(raw)} of {expected} bytes")
    rows = np.frombuffer(raw[:expected], dtype=np.uint8).reshape(height, stride + 1)
    out = np.zeros((height, stride), dtype=np.int32)
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(height):
        ftype = rows[y, 0]
        line = rows[y, 1:].astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            # left-dependent filters need a sequential pass
            cur = np.empty(stride, dtype=np.int32)
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                up = prev[x]
                if ftype == 1:
                    pred = left
                elif ftype == 3:
                    pred = (left + up) >> 1
                else:
                    ul = prev[x - bpp] if x >= bpp else 0
                    pred = int(_paeth(left, up, ul))
                cur[x] = (line[x] + pred) & 0xFF
        else:
            raise FormatError(f"unknown PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out.astype(np.uint8)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """``round(0.299 R + 0.587 G + 0.114 B)`` with halves rounded up."""
    rgb = np.asarray(rgb, dtype=np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def decode_png_gray(data: bytes, min_side: int = MIN_SIDE) -> GrayImage:
    """Decode an 8-bit, non-interlaced PNG to luminance.

    Gray and gray+alpha inputs keep their gray channel; RGB and RGBA are
    converted with :func:`luminance`. Alpha is discarded.
    """
    data = bytes(data)
    if not data.startswith(_PNG_MAGIC):
        raise FormatError("not a PNG file")
    header = None
    idat = []
    for ctype, body in _png_chunks(data):
        if ctype == b"IHDR":
            if len(body) != 13:
                raise FormatError("IHDR chunk has wrong length")
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            idat.append(body)
    if header is None:
        raise FormatError("PNG has no IHDR chunk")
    width, height, depth, ctype, _, _, interlace = header
    if depth != 8:
        raise UnsupportedFormatError(f"PNG bit depth {depth} not supported")
    if interlace != 0:
        raise UnsupportedFormatError("interlaced PNG not supported")
    if ctype not in _CHANNELS:
        raise UnsupportedFormatError(f"PNG color type {ctype} not supported")
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise CorruptionError(f"PNG image data does not inflate: {exc}") from exc
    channels = _CHANNELS[ctype]
    flat = _unfilter(raw, height, width * channels, channels)
    pix = flat.reshape(height, width, channels)
    gray = pix[..., 0] if channels <= 2 else luminance(pix[..., :3])
    return GrayImage(gray, min_side=min_side)


def encode_png(pixels: np.ndarray) -> bytes:
    """Write an 8-bit gray (2-D) or RGB (3-D) PNG with filter type 0."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    ctype = 0 if pixels.ndim == 2 else 2
    height, width = pixels.shape[:2]
    rows = pixels.reshape(height, -1)
    raw = b"".join(b"\x00" + row.tobytes() for row in rows)

    def chunk(tag, body):
        crc = zlib.crc32(tag + body) & 0xFFFFFFFF
        return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", crc)

    ihdr = struct.pack(">IIBBBBB", width, height, 8, ctype, 0, 0, 0)
    return (
        _PNG_MAGIC
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )


def decode_image(data: bytes, min_side: int = MIN_SIDE) -> GrayImage:
    """Dispatch on magic bytes."""
    if data[:8] == _PNG_MAGIC:
        return decode_png_gray(data, min_side)
    return decode_pgm(data, min_side)


def read_image(path, min_side: int = MIN_SIDE) -> GrayImage:
    return decode_image(Path(path).read_bytes(), min_side)


# ---------------------------------------------------------------------------
# Datasets and splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledItem:
    id: str
    label: int
    image: GrayImage


@dataclass(frozen=True)
class LabeledImageSet:
    """Images with integer labels; ``class_names[label]`` names each class."""

    items: tuple
    class_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        m = len(self.class_names)
        if m < 2:
            raise DatasetError(f"need at least 2 classes, got {m}")
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise DatasetError("image ids are not unique")
        for it in self.items:
            if not 0 <= it.label < m:
                raise DatasetError(f"label {it.label} of {it.id!r} out of range")

    @property
    def m(self) -> int:
        return len(self.class_names)

    def by_id(self) -> dict:
        return {it.id: it for it in self.items}

    def labels(self) -> dict:
        return {it.id: it.label for it in self.items}


def load_dataset(root) -> LabeledImageSet:
    """Load ``root/<class_name>/<image>.{pgm,png}``.

    Classes are the sorted subdirectory names. Files that fail to decode are
    skipped with a :class:`DatasetWarning`; a class left with fewer than two
    images is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name)
    if len(class_dirs) < 2:
        raise DatasetError(f"{root} contains {len(class_dirs)} class folders; need >= 2")
    items = []
    for label, cdir in enumerate(class_dirs):
        files = sorted(
            (p for p in cdir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
            key=lambda p: p.name,
        )
        usable = 0
        for path in files:
            try:
                image = read_image(path)
            except (FormatError, DimensionError) as exc:
                warnings.warn(f"skipping {path}: {exc}", DatasetWarning, stacklevel=2)
                continue
            items.append(LabeledItem(f"{cdir.name}/{path.name}", label, image))
            usable += 1
        if usable < 2:
            raise DatasetError(f"class {cdir.name!r} has {usable} usable images; need >= 2")
    return LabeledImageSet(items, [p.name for p in class_dirs])


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    train_per_class: int
    train: tuple
    test: tuple

    @property
    def assignment(self) -> dict:
        out = {i: "train" for i in self.train}
        out.update({i: "test" for i in self.test})
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "train_per_class": self.train_per_class,
                "train": list(self.train),
                "test": list(self.test),
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        d = json.loads(text)
        return cls(int(d["seed"]), int(d["train_per_class"]), tuple(d["train"]), tuple(d["test"]))


def make_split(dataset: LabeledImageSet, train_per_class: int, seed: int) -> SplitSpec:
    """Seeded per-class random split.

    Each class puts ``min(train_per_class, size - 1)`` images in train so that
    no test set is empty. Train and test lists follow dataset order.
    """
    if train_per_class < 1:
        raise ParameterError(f"train_per_class must be >= 1, got {train_per_class}")
    rng = np.random.default_rng(seed)
    chosen = set()
    for label in range(dataset.m):
        ids = [it.id for it in dataset.items if it.label == label]
        if len(ids) < 2:
            raise DatasetError(f"class {dataset.class_names[label]!r} has fewer than 2 images")
        k = min(train_per_class, len(ids) - 1)
        order = rng.permutation(len(ids))
        chosen.update(ids[i] for i in order[:k])
    train = tuple(it.id for it in dataset.items if it.id in chosen)
    test = tuple(it.id for it in dataset.items if it.id not in chosen)
    return SplitSpec(int(seed), int(train_per_class), train, test)
