# src/losses/terms.py
"""
Loss terms on plain arrays.

Reductions go through math.fsum so a value never depends on summation
order; the differentiable twins in src.model.objective reuse the same
nearest-neighbour assignments.
"""
from __future__ import annotations

import math
from typing import Literal, Union

import numpy as np

from src.geometry.neighbors import knn, nearest, sq_dist_rows
from src.geometry.pointcloud import KeypointSet, PointCloud
from src.utils.errors import BadWeights, EmptyCloud, SizeMismatch, TooFewPoints

PointsLike = Union[PointCloud, KeypointSet, np.ndarray]
FpsDirection = Literal["symmetric", "keypoints_to_anchors", "anchors_to_keypoints"]


def as_array(x: PointsLike, what: str = "point cloud") -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    if isinstance(x, KeypointSet):
        return x.keypoints
    arr = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if arr.shape[0] == 0:
        raise EmptyCloud(what)
    return arr


def _mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / len(values)


# ── chamfer family ──────────────────────────────────────────
def chamfer_oneway(a: PointsLike, b: PointsLike) -> float:
    """d(A→B) = mean over a of min_b ‖a − b‖²."""
    a, b = as_array(a), as_array(b)
    _, d2 = nearest(a, b)
    return _mean(d2)


def chamfer_asym(pred: PointsLike, target: PointsLike, alpha: float, beta: float) -> float:
    """α·d(pred→target) + β·d(target→pred); precision vs coverage."""
    if not (beta > alpha > 0):
        raise BadWeights(alpha, beta)
    return alpha * chamfer_oneway(pred, target) + beta * chamfer_oneway(target, pred)


def repulsion(pred: PointsLike, k_nn: int, margin: float) -> float:
    """Mean hinge max(0, m − ‖xᵢ − xⱼ‖) over each point's k nearest neighbours."""
    x = as_array(pred)
    n = len(x)
    if k_nn < 1 or n <= k_nn:
        raise TooFewPoints(n, k_nn)
    if margin <= 0:
        raise ValueError(f"repulsion margin must be > 0, got {margin}")
    idx = knn(x, k_nn)
    dist = np.sqrt(sq_dist_rows(x[:, None, :], x[idx]))
    return math.fsum(np.maximum(0.0, margin - dist).ravel().tolist()) / (n * k_nn)


def gamma_weight(sigma: float, sigma_data: float) -> float:
    """σ_data / (σ + σ_data): repulsion down-weighting at high noise."""
    return sigma_data / (sigma + sigma_data)


# ── keypoint terms ──────────────────────────────────────────
def keypoint_chamfer(keypoints: PointsLike, surface: PointsLike) -> float:
    """One-way d(K→S0): keypoints should sit on the input surface."""
    return chamfer_oneway(keypoints, surface)


def fps_anchor_loss(
    keypoints: PointsLike,
    anchors: PointsLike,
    direction: FpsDirection = "symmetric",
) -> float:
    """Chamfer between keypoints and FPS anchors; symmetric averages both ways."""
    if direction == "keypoints_to_anchors":
        return chamfer_oneway(keypoints, anchors)
    if direction == "anchors_to_keypoints":
        return chamfer_oneway(anchors, keypoints)
    return 0.5 * (chamfer_oneway(keypoints, anchors) + chamfer_oneway(anchors, keypoints))


def deformation_consistency(transformed: PointsLike, deformed: PointsLike) -> float:
    """(1/d) Σ ‖T(kᵢ) − kᵢ^deformed‖², index-aligned (order sensitive)."""
    a, b = as_array(transformed, "keypoints"), as_array(deformed, "keypoints")
    if a.shape != b.shape:
        raise SizeMismatch(len(a), len(b), "keypoint sets")
    return _mean(sq_dist_rows(a, b))


# ── latent terms ────────────────────────────────────────────
def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − log σ² − 1)."""
    mu = np.asarray(mu, dtype=np.float64).ravel()
    logvar = np.asarray(logvar, dtype=np.float64).ravel()
    if mu.shape != logvar.shape:
        raise SizeMismatch(mu.size, logvar.size, "mu/logvar")
    return 0.5 * math.fsum((mu * mu + np.exp(logvar) - logvar - 1.0).tolist())


def kl_warmup(step: int, warmup_steps: int) -> float:
    """λ4 ramp: min(1, t / T_warmup)."""
    if warmup_steps <= 0:
        raise ValueError("warmup_steps must be > 0")
    return min(1.0, max(0, step) / warmup_steps)
