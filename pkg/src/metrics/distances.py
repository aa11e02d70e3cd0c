# src/metrics/distances.py
"""Shape-level distances: symmetric Chamfer, exact EMD, and MMD-CD over sets."""
from __future__ import annotations

import logging
import math
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from src.geometry.neighbors import pairwise_sq_dists
from src.losses.terms import PointsLike, as_array, chamfer_oneway
from src.utils.errors import EmptySet, SizeMismatch, TooLargeForExact
from src.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

EMD_EXACT_CAP = 1024


def chamfer_symmetric(a: PointsLike, b: PointsLike) -> float:
    """½(d(A→B) + d(B→A))."""
    return 0.5 * (chamfer_oneway(a, b) + chamfer_oneway(b, a))


def emd(a: PointsLike, b: PointsLike, cap: int = EMD_EXACT_CAP) -> float:
    """
    Mean Euclidean transport cost under the optimal bijection, solved
    exactly as a linear assignment problem.
    """
    a, b = as_array(a), as_array(b)
    if len(a) != len(b):
        raise SizeMismatch(len(a), len(b))
    if len(a) > cap:
        raise TooLargeForExact(len(a), cap)
    cost = np.sqrt(pairwise_sq_dists(a, b))
    rows, cols = linear_sum_assignment(cost)
    return math.fsum(cost[rows, cols].tolist()) / len(a)


def mmd_cd(
    generated: Sequence[PointsLike],
    reference: Sequence[PointsLike],
    threads: int = 1,
) -> float:
    """(1/|ℛ|) Σ_R min_G CD(R, G)."""
    if not generated:
        raise EmptySet("generated")
    if not reference:
        raise EmptySet("reference")
    gen = [as_array(g) for g in generated]

    def closest(ref) -> float:
        return min(chamfer_symmetric(ref, g) for g in gen)

    values = ordered_map(closest, [as_array(r) for r in reference], threads)
    return math.fsum(values) / len(values)


def reconstruction_scores(original: PointsLike, reconstructed: PointsLike,
                          cap: Optional[int] = EMD_EXACT_CAP) -> dict:
    """CD and, for equal sizes within the exact cap, EMD between a shape and its decode."""
    a, b = as_array(original), as_array(reconstructed)
    out = {"cd": chamfer_symmetric(a, b), "emd": None}
    if len(a) == len(b) and (cap is None or len(a) <= cap):
        out["emd"] = emd(a, b, cap=cap or len(a))
    else:
        logger.debug("EMD skipped: sizes %d/%d", len(a), len(b))
    return out
