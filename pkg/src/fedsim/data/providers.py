"""Dataset providers: synthetic blobs, MNIST-style IDX files, numeric CSV."""

from __future__ import annotations

import csv
import gzip
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .container import DataContainer

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def generate_synthetic(num_classes: int, per_class: int, dim: int, seed: int,
                       separation: float = 4.0, noise: float = 1.0) -> DataContainer:
    """Gaussian blobs, one per class, ``per_class`` points each.

    Class means are ``separation`` times scaled one-hot directions (padded with
    a random orthogonal rotation when ``dim >= num_classes``), so they are
    linearly separable before noise. Rows are ordered by class.
    """
    if min(num_classes, per_class, dim) < 1:
        raise ValueError("num_classes, per_class and dim must all be positive")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, dim))
    if dim >= num_classes:
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        means = q[:num_classes]
    else:
        means /= np.linalg.norm(means, axis=1, keepdims=True)
    means *= separation
    features = np.concatenate(
        [means[c] + noise * rng.normal(size=(per_class, dim)) for c in range(num_classes)]
    )
    labels = np.repeat(np.arange(num_classes), per_class)
    return DataContainer(features, labels, num_classes)


def _read(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_header(raw: bytes, magic: int, ndims: int, path) -> tuple:
    need = 4 + 4 * ndims
    if len(raw) < need:
        raise FormatError(f"{path}: truncated IDX header")
    found, *dims = struct.unpack(">" + "I" * (1 + ndims), raw[:need])
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    return tuple(dims), need


def load_idx(images_path, labels_path, num_classes: int = 10) -> DataContainer:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    raw_images = _read(images_path)
    raw_labels = _read(labels_path)
    (n_img, rows, cols), off_i = _idx_header(raw_images, IDX_IMAGES_MAGIC, 3, images_path)
    (n_lbl,), off_l = _idx_header(raw_labels, IDX_LABELS_MAGIC, 1, labels_path)
    if n_img != n_lbl:
        raise FormatError(f"{n_img} images but {n_lbl} labels")
    pixels = np.frombuffer(raw_images, dtype=np.uint8, offset=off_i)
    labels = np.frombuffer(raw_labels, dtype=np.uint8, offset=off_l)
    if pixels.size != n_img * rows * cols:
        raise FormatError(f"{images_path}: expected {n_img * rows * cols} pixel bytes, found {pixels.size}")
    if labels.size != n_lbl:
        raise FormatError(f"{labels_path}: expected {n_lbl} label bytes, found {labels.size}")
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"{labels_path}: label {labels.max()} exceeds {num_classes} classes")
    features = pixels.reshape(n_img, rows * cols) / 255.0
    return DataContainer(features, labels, num_classes)


def write_idx(images, labels, images_path, labels_path) -> None:
    """Write uint8 ``images`` of shape (n, rows, cols) and ``labels`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_csv(path, num_classes=None) -> DataContainer:
    """Numeric CSV with a header row; the last column holds the integer label."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if len(header) < 2:
            raise FormatError(f"{path}: need at least one feature column and a label column")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    table = np.array(rows)
    labels = table[:, -1]
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise FormatError(f"{path}: label column must hold non-negative integers")
    return DataContainer(table[:, :-1], labels.astype(np.int64), num_classes)
