# src/data/synthetic.py
"""
Procedural "airplane" category for desk-scale training and evaluation.

Each shape is a body ellipsoid along x, two wing boxes spanning z and a
vertical tail fin, controlled by six reals. Points are sampled on the
primitive surfaces in proportion to their area, labelled by part and
shuffled; six canonical keypoints are annotated on the surfaces.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.geometry.annotations import AnnotationSet
from src.geometry.pointcloud import LabeledPointCloud, make_rng, normalize
from src.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

PART_NAMES = ("body", "wing", "tail")
BODY, WING, TAIL = range(3)
KEYPOINT_NAMES = ("nose", "tail_end", "right_wing_tip", "left_wing_tip", "fin_top", "belly")

# (low, high) per shape parameter
PARAM_RANGES: Dict[str, Tuple[float, float]] = {
    "body_length": (1.6, 2.4),
    "body_radius": (0.16, 0.26),
    "wing_span": (1.0, 1.8),
    "wing_chord": (0.25, 0.45),
    "wing_offset": (-0.15, 0.25),
    "fin_height": (0.2, 0.45),
}
THICKNESS = 0.04
FIN_CHORD = 0.3


@dataclass(frozen=True)
class ShapeParams:
    body_length: float
    body_radius: float
    wing_span: float
    wing_chord: float
    wing_offset: float
    fin_height: float

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "ShapeParams":
        return cls(**{name: float(rng.uniform(lo, hi)) for name, (lo, hi) in PARAM_RANGES.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def face_areas(self) -> np.ndarray:
        ext = self.hi - self.lo
        per_axis = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]])
        return np.repeat(per_axis, 2)       # (axis0 lo, axis0 hi, axis1 lo, ...)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        areas = self.face_areas()
        faces = rng.choice(6, size=n, p=areas / areas.sum())
        pts = rng.uniform(self.lo, self.hi, size=(n, 3))
        axis, side = faces // 2, faces % 2
        pts[np.arange(n), axis] = np.where(side == 0, self.lo[axis], self.hi[axis])
        return pts

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        below, above = self.lo - p, p - self.hi
        outside = np.sqrt(np.sum(np.maximum(np.maximum(below, above), 0.0) ** 2, axis=-1))
        inside = np.min(np.minimum(p - self.lo, self.hi - p), axis=-1)
        return np.where(np.all((p >= self.lo) & (p <= self.hi), axis=-1), inside, outside)


@dataclass(frozen=True)
class Ellipsoid:
    radii: np.ndarray

    def area(self) -> float:
        # Knud Thomsen's approximation
        p = 1.6075
        a, b, c = self.radii ** p
        return 4.0 * math.pi * ((a * b + a * c + b * c) / 3.0) ** (1.0 / p)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.standard_normal((n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return u * self.radii

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        level = np.sqrt(np.sum((p / self.radii) ** 2, axis=-1))
        return np.abs(level - 1.0) * self.radii.min()


def build_primitives(params: ShapeParams) -> List[Tuple[int, object]]:
    """(part label, primitive) list for one parameter set."""
    a, r = params.body_length / 2.0, params.body_radius
    wx, c, s = params.wing_offset, params.wing_chord, params.wing_span
    t = THICKNESS
    fin_x = -0.9 * a
    return [
        (BODY, Ellipsoid(np.array([a, r, r]))),
        (WING, Box(np.array([wx - c / 2, -t / 2, 0.5 * r]), np.array([wx + c / 2, t / 2, s]))),
        (WING, Box(np.array([wx - c / 2, -t / 2, -s]), np.array([wx + c / 2, t / 2, -0.5 * r]))),
        (TAIL, Box(np.array([fin_x, 0.5 * r, -t / 2]), np.array([fin_x + FIN_CHORD, r + params.fin_height, t / 2]))),
    ]


def canonical_keypoints(params: ShapeParams) -> AnnotationSet:
    a, r = params.body_length / 2.0, params.body_radius
    wx, s = params.wing_offset, params.wing_span
    fin_top = (-0.9 * a + FIN_CHORD / 2.0, r + params.fin_height, 0.0)
    points = [(a, 0.0, 0.0), (-a, 0.0, 0.0), (wx, 0.0, s), (wx, 0.0, -s), fin_top, (0.0, -r, 0.0)]
    return AnnotationSet(np.array(points), np.arange(len(KEYPOINT_NAMES)))


def _allocate(n: int, areas: Sequence[float]) -> np.ndarray:
    """Largest-remainder split of n points by area, at least one per primitive."""
    areas = np.asarray(areas, dtype=np.float64)
    if n < len(areas):
        raise ValueError(f"need at least {len(areas)} points, got {n}")
    raw = n * areas / areas.sum()
    counts = np.floor(raw).astype(np.int64)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    for i in np.flatnonzero(counts == 0):
        counts[i] = 1
        counts[np.argmax(counts)] -= 1
    return counts


@dataclass(frozen=True)
class SyntheticSample:
    shape_id: str
    cloud: LabeledPointCloud            # normalized
    annotations: AnnotationSet          # normalized with the cloud
    params: ShapeParams
    center: np.ndarray
    scale: float

    def surface_residual(self, points: np.ndarray) -> np.ndarray:
        """Distance of normalized `points` to the nearest primitive surface."""
        raw = np.asarray(points, dtype=np.float64).reshape(-1, 3) * self.scale + self.center
        dists = [prim.surface_distance(raw) for _, prim in build_primitives(self.params)]
        return np.min(np.stack(dists), axis=0) / self.scale


def make_shape(index: int, seed: int, n_points: int) -> SyntheticSample:
    rng = make_rng(seed, index)
    params = ShapeParams.sample(rng)
    prims = build_primitives(params)
    counts = _allocate(n_points, [p.area() for _, p in prims])

    pts, labels = [], []
    for (label, prim), count in zip(prims, counts):
        pts.append(prim.sample(rng, int(count)))
        labels.append(np.full(int(count), label, dtype=np.int64))
    pts, labels = np.concatenate(pts), np.concatenate(labels)
    perm = rng.permutation(n_points)

    cloud, center, scale = normalize(LabeledPointCloud(pts[perm], labels=labels[perm], n_labels=len(PART_NAMES)))
    ann = canonical_keypoints(params)
    ann = AnnotationSet((ann.points - center) / scale, ann.labels)
    return SyntheticSample(f"shape_{index:04d}", cloud, ann, params, center, scale)


def make_synthetic_dataset(count: int, seed: int, n_points: int = 256, threads: int = 1) -> List[SyntheticSample]:
    """`count` shapes, each from its own seeded stream (so results ignore `threads`)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    samples = ordered_map(lambda i: make_shape(i, seed, n_points), range(count), threads)
    logger.info("generated %d synthetic shapes (%d points each)", count, n_points)
    return samples
