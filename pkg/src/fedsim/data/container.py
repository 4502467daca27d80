from __future__ import annotations

from typing import Optional

import numpy as np


class DataContainer:
    """Feature matrix plus integer labels in ``[0, num_classes)``.

    Arrays are copied and frozen on construction, so a container can be shared
    freely between clients and worker threads.
    """

    def __init__(self, features, labels, num_classes: Optional[int] = None):
        x = np.array(features, dtype=np.float64, copy=True)
        y = np.array(labels, copy=True)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise ValueError(f"features must be a 2-D matrix, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(f"{x.shape[0]} feature rows but labels shaped {y.shape}")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        if num_classes is None:
            num_classes = int(y.max()) + 1 if y.size else 0
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
        x.setflags(write=False)
        y.setflags(write=False)
        self.features = x
        self.labels = y
        self.num_classes = int(num_classes)

    def __len__(self):
        return self.labels.shape[0]

    def __repr__(self):
        return f"DataContainer(n={len(self)}, dim={self.dim}, classes={self.num_classes})"

    def __eq__(self, other):
        if not isinstance(other, DataContainer):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "DataContainer":
        idx = np.asarray(indices, dtype=np.int64)
        return DataContainer(self.features[idx], self.labels[idx], self.num_classes)

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def train_test_split(data: DataContainer, test_fraction: float, seed: int):
    """Seeded shuffle then split into ``(train, test)``."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(data)
    n_test = int(round(n * test_fraction))
    order = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))
