from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PCAResult:
    mean: np.ndarray
    components: np.ndarray  # (d, P), orthonormal rows
    projected: np.ndarray  # (K, d)
    explained_variance: np.ndarray  # (d,), descending

    def reconstruct(self) -> np.ndarray:
        return self.mean + self.projected @ self.components


def pca(matrix, d: int) -> PCAResult:
    """Top-``d`` principal components of the rows of ``matrix``.

    Computed from the thin SVD of the centred matrix, which gives the
    covariance eigenvectors without squaring the condition number. Each
    component is signed so that its largest-magnitude coordinate is
    positive. Directions with zero variance get a zero component and zero
    projections.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("pca expects a 2-D matrix")
    k, p = x.shape
    if not 1 <= d <= min(k, p):
        raise ValueError(f"d={d} must lie in [1, {min(k, p)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    _, sv, vt = np.linalg.svd(xc, full_matrices=False)
    sv = sv[:d].copy()
    comps = vt[:d].copy()
    # singular values at rounding level are treated as exact zeros
    tol = max(sv.max(initial=0.0), np.abs(x).max(initial=0.0)) * max(k, p) * np.finfo(np.float64).eps
    dead = sv <= tol
    sv[dead] = 0.0
    comps[dead] = 0.0

    for row in comps:
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            row *= -1.0
    return PCAResult(mean=mean, components=comps, projected=xc @ comps.T,
                     explained_variance=sv ** 2 / max(k - 1, 1))
