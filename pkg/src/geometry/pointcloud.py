# src/geometry/pointcloud.py
"""
Point-cloud containers, normalization, subsampling and seeded randomness.

Coordinates are always float64 arrays of shape (N, 3). Containers are
frozen: operations return new objects and never mutate their inputs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, TypeVar

import numpy as np

from src.utils.errors import DegenerateCloud, EmptyCloud, NTooLarge, ShapeMismatch

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────────────────────
# Seeded randomness
# ─────────────────────────────────────────────────────────────
def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Deterministic generator for `seed`, optionally on an independent
    sub-stream (e.g. ``make_rng(seed, epoch, sample)``).
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


def _as_points(points, what: str = "points") -> np.ndarray:
    arr = np.array(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeMismatch("(N, 3)", arr.shape, what)
    if arr.shape[0] == 0:
        raise EmptyCloud(what)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"Non-finite coordinates in {what}")
    arr.setflags(write=False)
    return arr


# ─────────────────────────────────────────────────────────────
# Containers
# ─────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        """Same cloud type (labels kept) with replaced coordinates."""
        return PointCloud(points)

    def take(self, indices: Sequence[int]) -> "PointCloud":
        return self.with_points(self.points[np.asarray(indices, dtype=np.int64)])


@dataclass(frozen=True)
class LabeledPointCloud(PointCloud):
    labels: np.ndarray = field(default=None)
    n_labels: Optional[int] = None

    def __post_init__(self):
        super().__post_init__()
        if self.labels is None:
            raise ValueError("LabeledPointCloud requires labels")
        labels = np.asarray(self.labels)
        if labels.shape != (len(self),):
            raise ShapeMismatch((len(self),), labels.shape, "labels")
        if labels.size and (labels.min() < 0 or not np.all(labels == np.round(labels))):
            raise ValueError("Labels must be non-negative integers")
        labels = labels.astype(np.int64)
        n_labels = self.n_labels if self.n_labels is not None else int(labels.max()) + 1
        if labels.max() >= n_labels:
            raise ValueError(f"Label {int(labels.max())} out of range [0, {n_labels})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_labels", n_labels)

    def with_points(self, points: np.ndarray) -> "LabeledPointCloud":
        return LabeledPointCloud(points, labels=self.labels, n_labels=self.n_labels)

    def take(self, indices: Sequence[int]) -> "LabeledPointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledPointCloud(self.points[idx], labels=self.labels[idx], n_labels=self.n_labels)

    def unlabeled(self) -> PointCloud:
        return PointCloud(self.points)


@dataclass(frozen=True)
class KeypointSet:
    """Ordered keypoints; row k is keypoint identity k across instances."""

    keypoints: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "keypoints", _as_points(self.keypoints, "keypoints"))

    def __len__(self) -> int:
        return self.keypoints.shape[0]

    def vec(self) -> np.ndarray:
        """Row-major flattening, length 3d."""
        return self.keypoints.reshape(-1).copy()

    @classmethod
    def from_vec(cls, vec: np.ndarray) -> "KeypointSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or vec.size % 3:
            raise ShapeMismatch("(3d,)", vec.shape, "keypoint vector")
        return cls(vec.reshape(-1, 3))


PC = TypeVar("PC", bound=PointCloud)


# ─────────────────────────────────────────────────────────────
# Operations
# ─────────────────────────────────────────────────────────────
def normalize(pc: PC) -> Tuple[PC, np.ndarray, float]:
    """
    Center at the centroid and scale so the farthest point has norm 1.

    Returns the normalized cloud plus (center, scale) so that
    ``original = normalized * scale + center``.
    """
    center = pc.points.mean(axis=0)
    shifted = pc.points - center
    scale = float(np.sqrt((shifted * shifted).sum(axis=1)).max())
    if not scale > 0.0:
        raise DegenerateCloud()
    return pc.with_points(shifted / scale), center, scale


def denormalize(pc: PC, center: np.ndarray, scale: float) -> PC:
    return pc.with_points(pc.points * scale + np.asarray(center, dtype=np.float64))


def subsample(pc: PC, n: int, seed: int) -> PC:
    """Uniform subset of `n` points without replacement."""
    total = len(pc)
    if n > total:
        raise NTooLarge(n, total)
    if n < 1:
        raise EmptyCloud("subsample")
    idx = make_rng(seed).choice(total, size=n, replace=False)
    return pc.take(idx)
