"""Dataset ingestion: IDX parsing, dequantization, binarization."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import streams

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file."""


@dataclass
class Dataset:
    """Row-major examples in [0,1]; binary datasets contain only {0,1}."""

    x: np.ndarray
    labels: np.ndarray | None = None
    binary: bool = False
    note: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ValueError("examples must be a 2-D array")
        if np.min(self.x) < 0.0 or np.max(self.x) > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if self.binary and not np.all((self.x == 0.0) | (self.x == 1.0)):
            raise ValueError("binary dataset contains non-binary values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != len(self.x):
                raise ValueError("label count does not match example count")

    def __len__(self):
        return len(self.x)

    def filter_label(self, label: int) -> "Dataset":
        if self.labels is None:
            raise ValueError("dataset has no labels")
        keep = self.labels == label
        return Dataset(self.x[keep], self.labels[keep], self.binary,
                       f"{self.note} [label={label}]")


def _read_exact(f, n, path, what):
    buf = f.read(n)
    if len(buf) != n:
        raise IdxFormatError(
            f"{path}: truncated while reading {what} at byte {f.tell() - len(buf)}: "
            f"wanted {n} bytes, got {len(buf)}"
        )
    return buf


def load_mnist_idx(images_path, labels_path=None, note="") -> Dataset:
    """Read big-endian IDX image (and optional label) files, scaling pixels by 1/255."""
    with open(images_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, images_path,
                                                                  "header"))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(
                f"{images_path}: bad magic 0x{magic:08x} at byte 0, expected "
                f"0x{IDX_IMAGES_MAGIC:08x}"
            )
        raw = _read_exact(f, n * rows * cols, images_path, f"{n} images")
    x = np.frombuffer(raw, dtype=np.uint8).astype(np.float64).reshape(n, rows * cols)
    x /= 255.0
    labels = None
    if labels_path is not None:
        with open(labels_path, "rb") as f:
            magic, n_labels = struct.unpack(">ii", _read_exact(f, 8, labels_path,
                                                               "header"))
            if magic != IDX_LABELS_MAGIC:
                raise IdxFormatError(
                    f"{labels_path}: bad magic 0x{magic:08x} at byte 0, expected "
                    f"0x{IDX_LABELS_MAGIC:08x}"
                )
            if n_labels != n:
                raise IdxFormatError(
                    f"{labels_path}: {n_labels} labels for {n} images"
                )
            labels = np.frombuffer(_read_exact(f, n_labels, labels_path, "labels"),
                                   dtype=np.uint8).copy()
    return Dataset(x, labels, binary=False, note=note or str(images_path))


def dequantize(dataset: Dataset, seed: int) -> Dataset:
    """Spread integer-grid pixels over [0,1): pixel' = (255*pixel + u)/256, u ~ U[0,1)."""
    scaled = dataset.x * 255.0
    grid = np.round(scaled)
    if not np.allclose(scaled, grid, atol=1e-9):
        raise ValueError("dequantize requires pixels on the integer/255 grid")
    rng = streams.stream(seed, 0, 0, streams.DEQUANTIZE)
    u = rng.random(dataset.x.shape)
    return Dataset((grid + u) / 256.0, dataset.labels, binary=False,
                   note=f"{dataset.note} [dequantized]")


def binarize(dataset: Dataset = None, mode: str = "stochastic", seed: int = None,
             source=None) -> Dataset:
    """Binarize pixels: stochastic (1 with probability p), threshold at 0.5,
    or load a pre-binarized external file ('file' mode with source=...).
    """
    if mode == "stochastic":
        if seed is None:
            raise ValueError("stochastic binarization needs a seed")
        rng = streams.stream(seed, 0, 0, streams.BINARIZE)
        x = (rng.random(dataset.x.shape) < dataset.x).astype(np.float64)
        return Dataset(x, dataset.labels, binary=True,
                       note=f"{dataset.note} [stochastic binarized]")
    if mode == "threshold":
        x = (dataset.x >= 0.5).astype(np.float64)
        return Dataset(x, dataset.labels, binary=True,
                       note=f"{dataset.note} [threshold binarized]")
    if mode == "file":
        if source is None:
            raise ValueError("file mode needs source=path")
        x = _load_matrix(source)
        if not np.all((x == 0.0) | (x == 1.0)):
            raise ValueError(f"{source}: pre-binarized file contains non-binary values")
        labels = dataset.labels if dataset is not None and len(dataset) == len(x) else None
        return Dataset(x, labels, binary=True, note=f"{source} [file binarized]")
    raise ValueError(f"unknown binarization mode {mode!r}")


def _load_matrix(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".npy"):
        return np.asarray(np.load(path), dtype=np.float64)
    return np.loadtxt(path, dtype=np.float64, ndmin=2)


def select_examples(dataset: Dataset, n: int, seed: int):
    """First n after a seeded shuffle; returns (indices, examples)."""
    if n > len(dataset):
        raise ValueError(f"requested {n} examples from a dataset of {len(dataset)}")
    rng = streams.stream(seed, 0, 0, streams.SHUFFLE)
    idx = rng.permutation(len(dataset))[:n]
    return idx, dataset.x[idx]
