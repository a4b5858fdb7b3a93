"""Datasets: Bars-and-Stripes generation and IDX-format image ingestion."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import MAX_ENUM_VISIBLE, DiscreteDistribution, encode_visible

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """An IDX file failed header or length validation."""


@dataclass(frozen=True)
class BasSpec:
    """Side length A of the A x A Bars-and-Stripes square."""

    side: int

    def __post_init__(self):
        if self.side < 1:
            raise ValueError("side must be >= 1")

    @property
    def n_visible(self) -> int:
        return self.side ** 2


@dataclass
class ImageDataset:
    """Binary images flattened row-major, with grayscale originals when known."""

    items: np.ndarray                 # (count, M) of 0/1 floats
    grayscale: np.ndarray | None = None  # (count, M) uint8, if loaded from images
    split: str = "train"

    def __post_init__(self):
        self.items = np.atleast_2d(np.asarray(self.items, dtype=np.float64))
        bad = ~np.isin(self.items, (0.0, 1.0))
        if bad.any():
            raise ValueError("dataset pixels must be 0 or 1 after binarization")

    def __len__(self):
        return self.items.shape[0]

    @property
    def n_visible(self) -> int:
        return self.items.shape[1]

    def sample(self, rng, size: int) -> np.ndarray:
        """Uniform draw with replacement (samples from the empirical distribution)."""
        if len(self) == 0:
            raise ValueError("empty dataset")
        return self.items[rng.integers(0, len(self), size=size)]


def bas_sample(spec: BasSpec, rng) -> np.ndarray:
    """One Bars-and-Stripes image, flattened row-major, black = 1.

    Each column is painted black with probability 1/2, then the square is
    rotated 90 degrees (transposed) with probability 1/2.
    """
    return bas_batch(spec, rng, 1)[0]


def bas_batch(spec: BasSpec, rng, size: int) -> np.ndarray:
    """A (size, A^2) batch from the Bars-and-Stripes generator."""
    a = spec.side
    cols = (rng.random((size, a)) < 0.5).astype(np.float64)
    rotate = rng.random(size) < 0.5
    imgs = np.broadcast_to(cols[:, None, :], (size, a, a)).copy()
    imgs[rotate] = imgs[rotate].transpose(0, 2, 1)
    return imgs.reshape(size, a * a)


def bas_exact_distribution(spec: BasSpec) -> DiscreteDistribution:
    """Exact q(v) of the generator, by enumerating all 2 * 2^A outcomes."""
    a = spec.side
    m = spec.n_visible
    if m > MAX_ENUM_VISIBLE:
        raise ValueError(f"A = {a} gives M = {m} > {MAX_ENUM_VISIBLE}")
    probs = np.zeros(2 ** m)
    outcome_p = 0.5 * 2.0 ** -a
    for pattern in range(2 ** a):
        cols = np.array([(pattern >> j) & 1 for j in range(a)], dtype=np.float64)
        img = np.tile(cols, (a, 1))          # columns painted
        for grid in (img, img.T):            # unrotated / rotated
            probs[int(encode_visible(grid.reshape(1, m))[0])] += outcome_p
    return DiscreteDistribution(probs)


def _read_be32(f, path):
    raw = f.read(4)
    if len(raw) != 4:
        raise IdxFormatError(f"{path}: truncated header")
    return struct.unpack(">I", raw)[0]


def load_idx(path) -> ImageDataset:
    """Load an IDX image file; pixels stay grayscale until binarization."""
    with open(path, "rb") as f:
        magic = _read_be32(f, path)
        if magic == IDX_LABEL_MAGIC:
            raise IdxFormatError(f"{path}: label file given where images were expected")
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}")
        count = _read_be32(f, path)
        rows = _read_be32(f, path)
        cols = _read_be32(f, path)
        expected = count * rows * cols
        if expected > 2 ** 33:
            raise IdxFormatError(f"{path}: header declares {expected} pixels")
        payload = f.read()
    if len(payload) != expected:
        raise IdxFormatError(
            f"{path}: expected {expected} pixel bytes, found {len(payload)}"
        )
    gray = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)
    items = (gray >= 128).astype(np.float64)  # threshold default; see binarize_stochastic
    ds = ImageDataset(items=items, grayscale=gray.copy())
    return ds


def write_idx(path, images: np.ndarray, rows: int, cols: int):
    """Write grayscale images (count, rows*cols) as an IDX image file."""
    images = np.asarray(images, dtype=np.uint8)
    count = images.shape[0]
    if images.shape[1] != rows * cols:
        raise ValueError(f"images have {images.shape[1]} pixels, expected {rows * cols}")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, count, rows, cols))
        f.write(images.tobytes())


def load_idx_labels(path) -> np.ndarray:
    """Load an IDX label file (pass-through; the models are unsupervised)."""
    with open(path, "rb") as f:
        magic = _read_be32(f, path)
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}")
        count = _read_be32(f, path)
        payload = f.read()
    if len(payload) != count:
        raise IdxFormatError(f"{path}: expected {count} label bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).copy()


def binarize_stochastic(dataset: ImageDataset, rng) -> ImageDataset:
    """Set each pixel to 1 with probability intensity / 255, independently."""
    if dataset.grayscale is None:
        raise ValueError("dataset has no grayscale originals to binarize")
    p = dataset.grayscale.astype(np.float64) / 255.0
    items = (rng.random(p.shape) < p).astype(np.float64)
    return ImageDataset(items=items, grayscale=dataset.grayscale, split=dataset.split)


def minibatch_iter(dataset: ImageDataset, batch_size: int, rng):
    """Endless stream of with-replacement minibatches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    while True:
        yield dataset.sample(rng, batch_size)
