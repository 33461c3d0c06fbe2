"""Datasets: CIFAR-10 binary batches and small synthetic image sets."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ops import pool_bins

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)
# Per-channel statistics of the CIFAR-10 training images (pixels scaled to [0, 1]).
CIFAR10_MEAN = np.array([0.4914, 0.4822, 0.4465])
CIFAR10_STD = np.array([0.2470, 0.2435, 0.2616])

SYNTH_MODES = ("context-separable", "plain")


class DataFormatError(ValueError):
    """A data file does not follow the expected binary layout."""


@dataclass
class Dataset:
    """Labelled examples stored as one input array and one label array."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i):
        return self.inputs[i], int(self.labels[i])

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, index) -> "Dataset":
        return Dataset(self.inputs[index], self.labels[index], self.class_count, self.split)


# ---------------------------------------------------------------------------
# CIFAR-10

def load_cifar10_bin(path, split: str = "train") -> Dataset:
    """Read one CIFAR-10 binary batch file.

    Each record is a label byte followed by 3072 channel-major pixel bytes.
    Pixels are scaled to [0, 1] and standardized with the fixed per-channel
    constants ``CIFAR10_MEAN`` / ``CIFAR10_STD``.
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD_BYTES:
        whole = raw.size // RECORD_BYTES
        raise DataFormatError(
            f"{path}: {raw.size} bytes is not a whole number of {RECORD_BYTES}-byte records; "
            f"trailing data starts at byte offset {whole * RECORD_BYTES}")
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        i = int(bad[0])
        raise DataFormatError(f"{path}: label {labels[i]} out of range 0..9 at byte offset {i * RECORD_BYTES}")
    pixels = records[:, 1:].reshape((-1,) + IMAGE_SHAPE).astype(np.float64) / 255.0
    pixels = (pixels - CIFAR10_MEAN[:, None, None]) / CIFAR10_STD[:, None, None]
    return Dataset(pixels, labels, 10, split)


def load_cifar10_dir(directory, split: str = "train") -> Dataset:
    """Concatenate ``data_batch_*.bin`` (train) or read ``test_batch.bin`` (test)."""
    directory = Path(directory)
    files = sorted(directory.glob("data_batch_*.bin")) if split == "train" else [directory / "test_batch.bin"]
    files = [f for f in files if f.is_file()]
    if not files:
        raise FileNotFoundError(f"no CIFAR-10 {split} batches under {directory}")
    parts = [load_cifar10_bin(f, split) for f in files]
    return Dataset(np.concatenate([p.inputs for p in parts]),
                   np.concatenate([p.labels for p in parts]), 10, split)


def augment(batch: np.ndarray, rng: np.random.Generator, pad: int = 4, flip: bool = True) -> np.ndarray:
    """Random ``pad``-pixel shifted crop (zero fill) and horizontal flip, per image."""
    n, _, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, n)
    dx = rng.integers(0, 2 * pad + 1, n)
    flips = rng.random(n) < 0.5 if flip else np.zeros(n, dtype=bool)
    out = np.empty_like(batch)
    for i in range(n):
        crop = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


# ---------------------------------------------------------------------------
# synthetic

def pooled_summary(inputs: np.ndarray, size: int = 3) -> np.ndarray:
    """Adaptive ``size x size`` average of every channel, flattened per example."""
    n, c, h, w = inputs.shape
    rows, cols = pool_bins(h, size), pool_bins(w, size)
    out = np.empty((n, c, size, size))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = inputs[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return out.reshape(n, -1)


def _context_images(rng, labels, class_count, shape):
    c, h, w = shape
    n = len(labels)
    # Channel colour offsets on a circle orthogonal to grey, consecutive
    # classes at least 1.5 apart, plus a brightness ramp whose direction is
    # tied to the class.
    radius = 0.75 / math.sin(math.pi / class_count) if class_count > 1 else 0.0
    angle = 2 * math.pi * labels / class_count
    phase = 2 * math.pi * np.arange(c) / max(c, 1)
    colour = radius * math.sqrt(2.0 / 3.0) * np.cos(angle[:, None] + phase[None, :])
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    ramp = np.cos(angle)[:, None, None] * xx + np.sin(angle)[:, None, None] * yy
    texture = rng.standard_normal((n, c, h, w)) * 1.5
    return colour[:, :, None, None] + 0.8 * ramp[:, None] + texture


def _plain_images(rng, labels, class_count, shape):
    c, h, w = shape
    n = len(labels)
    # One zero-mean 2x2 motif per class, tiled with a random phase; every
    # even-sized window averages to exactly zero, so only local structure
    # carries the label.
    motif_rng = np.random.default_rng(7919)
    motifs = motif_rng.standard_normal((class_count, c, 2, 2))
    motifs -= motifs.mean(axis=(2, 3), keepdims=True)
    motifs /= np.sqrt((motifs ** 2).mean(axis=(1, 2, 3), keepdims=True))
    tiled = np.tile(motifs, (1, 1, h // 2 + 2, w // 2 + 2))
    dy = rng.integers(0, 2, n)
    dx = rng.integers(0, 2, n)
    base = np.stack([tiled[k, :, y:y + h, x:x + w] for k, y, x in zip(labels, dy, dx)])
    return base + rng.standard_normal((n, c, h, w)) * 1.0


def synth_dataset(seed: int, class_count: int, n: int, mode: str = "context-separable",
                  shape: tuple[int, int, int] = (3, 16, 16), split: str = "train") -> Dataset:
    """Balanced synthetic image classification set.

    ``context-separable``: classes differ in their pooled (3x3) summary
    through colour offsets and ramp directions, while heavy per-pixel
    texture makes small patches ambiguous.  ``plain``: classes differ only
    in a period-2 local motif whose pooled summary is zero.
    """
    if mode not in SYNTH_MODES:
        raise ValueError(f"synthetic mode must be one of {SYNTH_MODES}, got {mode!r}")
    if class_count < 1 or n < class_count:
        raise ValueError(f"need n >= class_count >= 1, got n={n}, class_count={class_count}")
    if shape[1] % 2 or shape[2] % 2:
        raise ValueError("synthetic images need even spatial extents")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % class_count)
    make = _context_images if mode == "context-separable" else _plain_images
    return Dataset(make(rng, labels, class_count, shape), labels, class_count, split)
