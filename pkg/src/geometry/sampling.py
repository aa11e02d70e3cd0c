# src/geometry/sampling.py
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from src.geometry.neighbors import sq_dist_rows
from src.geometry.pointcloud import KeypointSet, PointCloud, make_rng
from src.utils.errors import KTooLarge


def fps(
    pc: PointCloud,
    k: int,
    seed: int = 0,
    *,
    start: Optional[int] = None,
) -> Tuple[KeypointSet, np.ndarray]:
    """
    Farthest point sampling: greedy max-min selection of `k` points.

    The first index is drawn uniformly from `seed` unless `start` is given.
    Ties in the max-min criterion go to the lowest index.
    """
    points = pc.points
    n = len(points)
    if k > n or k < 1:
        raise KTooLarge(k, n)

    first = int(make_rng(seed).integers(n)) if start is None else int(start)
    selected = np.empty(k, dtype=np.int64)
    selected[0] = first
    dists = sq_dist_rows(points, points[first])
    dists[first] = -np.inf

    for i in range(1, k):
        nxt = int(np.argmax(dists))
        selected[i] = nxt
        dists = np.minimum(dists, sq_dist_rows(points, points[nxt]))
        # chosen indices never repeat, even for duplicate points
        dists[selected[: i + 1]] = -np.inf

    return KeypointSet(points[selected]), selected
