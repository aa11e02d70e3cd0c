# src/geometry/neighbors.py
"""
Exact nearest-neighbour queries.

Small problems use a dense distance matrix with a fixed evaluation order
(dx² + dy² + dz², left to right) so results are bit-identical to a plain
double loop. Above BRUTE_FORCE_LIMIT points a k-d tree finds the
indices and the squared distances are recomputed the same way.
"""
from __future__ import annotations

from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

BRUTE_FORCE_LIMIT = 4096
_CHUNK_ENTRIES = 1 << 22


def sq_dist_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances between matching rows of a and b."""
    d = a - b
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(|a|, |b|) matrix of squared Euclidean distances."""
    return sq_dist_rows(a[:, None, :], b[None, :, :])


def nearest(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    For every row of `a`, the index of its nearest row in `b` (ties → lowest
    index) and the squared distance to it.
    """
    if len(a) <= BRUTE_FORCE_LIMIT and len(b) <= BRUTE_FORCE_LIMIT:
        idx = np.empty(len(a), dtype=np.int64)
        step = max(1, _CHUNK_ENTRIES // max(1, len(b)))
        for start in range(0, len(a), step):
            block = pairwise_sq_dists(a[start:start + step], b)
            idx[start:start + step] = np.argmin(block, axis=1)
    else:
        _, idx = cKDTree(b).query(a, k=1)
        idx = np.asarray(idx, dtype=np.int64)
    return idx, sq_dist_rows(a, b[idx])


def knn(x: np.ndarray, k: int) -> np.ndarray:
    """(N, k) indices of each point's k nearest other points (self excluded)."""
    n = len(x)
    if n <= BRUTE_FORCE_LIMIT:
        d = pairwise_sq_dists(x, x)
        np.fill_diagonal(d, np.inf)
        return np.argsort(d, axis=1, kind="stable")[:, :k]

    _, idx = cKDTree(x).query(x, k=k + 1)
    out = np.empty((n, k), dtype=np.int64)
    for i, row in enumerate(idx):
        row = row[row != i]
        out[i] = row[:k]
    return out
