"""Synthetic data, IDX (MNIST-style) parsing and minibatch iteration."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConsistencyError, FormatError, ParameterError, TruncatedFileError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class DatasetHandle:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: str

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ConsistencyError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ConsistencyError(
                f"{self.features.shape[0]} feature rows but {self.labels.size} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConsistencyError(f"labels outside [0, {self.class_count})")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def split(self, n_first: int) -> tuple["DatasetHandle", "DatasetHandle"]:
        """First ``n_first`` rows and the remainder, same provenance."""
        a = DatasetHandle(self.features[:n_first].copy(), self.labels[:n_first].copy(),
                          self.class_count, self.provenance)
        b = DatasetHandle(self.features[n_first:].copy(), self.labels[n_first:].copy(),
                          self.class_count, self.provenance)
        return a, b


def synth_gaussian_mixture(classes: int, dim: int, per_class: int, spread: float,
                           seed: int) -> DatasetHandle:
    """Isotropic unit-variance clusters whose means lie on a sphere of radius ``spread``.

    Samples are interleaved by class (row i belongs to class i % classes).
    """
    if classes < 1 or dim < 1 or per_class < 1:
        raise ParameterError("classes, dim and per_class must be positive")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((classes, dim))
    means *= spread / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.tile(np.arange(classes), per_class)
    features = means[labels] + rng.standard_normal((labels.size, dim))
    return DatasetHandle(features, labels.astype(np.int64), classes, "synthetic")


def _read_exact(buf: bytes, offset: int, size: int, path) -> bytes:
    end = offset + size
    if end > len(buf):
        raise TruncatedFileError(
            f"{path}: expected at least {end} bytes, file has {len(buf)}",
            expected=end, actual=len(buf),
        )
    return buf[offset:end]


def _parse_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    buf = Path(path).read_bytes()
    (magic,) = struct.unpack(">I", _read_exact(buf, 0, 4, path))
    if magic != expected_magic:
        raise FormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack(f">{ndim}I", _read_exact(buf, 4, 4 * ndim, path))
    header = 4 + 4 * ndim
    payload = int(np.prod(dims, dtype=np.int64))
    data = _read_exact(buf, header, payload, path)
    if len(buf) != header + payload:
        raise FormatError(
            f"{path}: {len(buf) - header - payload} trailing bytes after payload"
        )
    return np.frombuffer(data, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> DatasetHandle:
    """Big-endian IDX images (u8, 3 dims) and labels (u8, 1 dim).

    Images are flattened row-major and scaled to [0, 1].
    """
    images = _parse_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _parse_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    classes = int(labels.max()) + 1 if labels.size else 0
    return DatasetHandle(features, labels, max(classes, 1), "idx")


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def batch_iter(ds: DatasetHandle, batch_size: int, seed: int,
               epochs: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Shuffled fixed-size minibatches; a fresh permutation each epoch, last
    partial batch dropped. Infinite when ``epochs`` is None."""
    if not 1 <= batch_size <= ds.n_samples:
        raise ParameterError(f"batch_size must be in [1, {ds.n_samples}], got {batch_size}")
    rng = np.random.default_rng(seed)
    per_epoch = ds.n_samples // batch_size
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(ds.n_samples)
        for b in range(per_epoch):
            idx = order[b * batch_size:(b + 1) * batch_size]
            yield ds.features[idx], ds.labels[idx]
        epoch += 1
