"""Dataset loading: IDX (MNIST-style big-endian), labeled CSV, and seeded
synthetic Gaussian blobs for desk-scale experiments."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class ParseError(ConfigError):
    """Malformed dataset file; message carries the byte/line offset."""


@dataclass
class Dataset:
    """Features in [0, 1], integer class labels, and a train/test split."""

    features: np.ndarray  # (num_instances, n0) float64
    labels: np.ndarray  # (num_instances,) int
    num_classes: int
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConfigError("feature/label counts differ")
        if np.any(~np.isfinite(self.features)):
            raise ConfigError("features contain NaN/Inf")
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise ConfigError("label index exceeds class count")

    @property
    def one_hot(self) -> np.ndarray:
        out = np.zeros((self.labels.shape[0], self.num_classes))
        out[np.arange(self.labels.shape[0]), self.labels] = 1.0
        return out

    def split(self):
        """(x_train, y_train_onehot, x_test, y_test_onehot)."""
        onehot = self.one_hot
        return (
            self.features[self.train_idx],
            onehot[self.train_idx],
            self.features[self.test_idx],
            onehot[self.test_idx],
        )


def _default_split(n: int, train_fraction: float = 0.8):
    cut = int(round(n * train_fraction))
    idx = np.arange(n)
    return idx[:cut], idx[cut:]


def _read_be_u32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise ParseError(
            f"{path}: truncated header, expected 4 bytes at offset {offset}, "
            f"file has {len(buf)}"
        )
    return struct.unpack_from(">I", buf, offset)[0]


def _read_idx_array(path: str | Path, expected_magic: int) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic = _read_be_u32(buf, 0, str(path))
    if magic != expected_magic:
        raise ParseError(
            f"{path}: bad magic 0x{magic:08x} at byte 0, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    dims = [_read_be_u32(buf, 4 + 4 * i, str(path)) for i in range(ndim)]
    header = 4 + 4 * ndim
    expected = header + int(np.prod(dims))
    if len(buf) != expected:
        raise ParseError(
            f"{path}: expected {expected} bytes for dims {dims}, got {len(buf)}"
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    train_fraction: float = 0.8,
) -> Dataset:
    """Load an IDX image/label file pair; pixels are scaled by 1/255."""
    images = _read_idx_array(images_path, IDX_IMAGE_MAGIC)
    labels = _read_idx_array(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(
            f"{images_path}: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(float) / 255.0
    labels = labels.astype(int)
    num_classes = int(labels.max()) + 1 if labels.size else 1
    train_idx, test_idx = _default_split(images.shape[0], train_fraction)
    return Dataset(features, labels, num_classes, train_idx, test_idx)


def write_idx_images(path: str | Path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", IDX_IMAGE_MAGIC))
        for d in images.shape:
            f.write(struct.pack(">I", d))
        f.write(images.tobytes())


def write_idx_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", IDX_LABEL_MAGIC))
        f.write(struct.pack(">I", labels.shape[0]))
        f.write(labels.tobytes())


def load_csv(
    path: str | Path,
    label_column: int,
    has_header: bool = False,
    train_fraction: float = 0.8,
) -> Dataset:
    """Numeric CSV with one integer label column; other columns are features."""
    rows = []
    labels = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for line_no, row in enumerate(reader, start=1):
            if has_header and line_no == 1:
                continue
            if not row:
                continue
            if label_column >= len(row):
                raise ParseError(
                    f"{path}:{line_no}: label column {label_column} out of range"
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise ParseError(f"{path}:{line_no}: non-numeric cell ({exc})") from exc
            labels.append(int(values.pop(label_column)))
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    features = np.asarray(rows, dtype=float)
    labels_arr = np.asarray(labels, dtype=int)
    if labels_arr.min() < 0:
        raise ParseError(f"{path}: negative label")
    num_classes = int(labels_arr.max()) + 1
    train_idx, test_idx = _default_split(features.shape[0], train_fraction)
    return Dataset(features, labels_arr, num_classes, train_idx, test_idx)


def synth_blobs(
    classes: int,
    dim: int,
    per_class: int,
    spread: float,
    seed: int,
    train_fraction: float = 0.8,
) -> Dataset:
    """Gaussian clusters at seeded random centers in [0, 1]^dim.

    Deterministic given the seed; points are clipped to [0, 1] so features
    match the normalized-image contract.
    """
    if classes < 1 or dim < 1 or per_class < 1:
        raise ConfigError("classes, dim and per_class must all be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.15, 0.85, size=(classes, dim))
    features = np.concatenate(
        [
            c + spread * rng.standard_normal((per_class, dim))
            for c in centers
        ]
    )
    labels = np.repeat(np.arange(classes), per_class)
    order = rng.permutation(classes * per_class)
    features = np.clip(features[order], 0.0, 1.0)
    labels = labels[order]
    train_idx, test_idx = _default_split(features.shape[0], train_fraction)
    return Dataset(features, labels, classes, train_idx, test_idx)
