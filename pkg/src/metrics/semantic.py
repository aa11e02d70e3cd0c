# src/metrics/semantic.py
"""
Semantic agreement of predicted keypoints: keypoint-part correlation and
the dual alignment score (standard and relaxed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from src.geometry.annotations import AnnotationSet
from src.geometry.neighbors import pairwise_sq_dists
from src.geometry.pointcloud import KeypointSet, LabeledPointCloud, PointCloud, make_rng
from src.utils.errors import NoLabels, SizeMismatch, TooFewSamples

KeypointsLike = Union[KeypointSet, np.ndarray]


def _kp(k: KeypointsLike) -> np.ndarray:
    return k.keypoints if isinstance(k, KeypointSet) else np.asarray(k, dtype=np.float64).reshape(-1, 3)


# ─────────────────────────────────────────────────────────────
# Keypoint correlation
# ─────────────────────────────────────────────────────────────
@dataclass
class CorrelationInputs:
    keypoints: Sequence[KeypointsLike]
    clouds: Sequence[LabeledPointCloud]
    tau: float = 0.05
    n_labels: Optional[int] = None


def correlation_matrix(inputs: CorrelationInputs) -> np.ndarray:
    """M[i, l] = fraction of samples with a label-l point within τ of keypoint i."""
    if not inputs.clouds:
        raise NoLabels()
    if len(inputs.keypoints) != len(inputs.clouds):
        raise SizeMismatch(len(inputs.keypoints), len(inputs.clouds), "keypoint sets and clouds")
    if not inputs.tau > 0:
        raise ValueError(f"tau must be > 0, got {inputs.tau}")

    n_labels = inputs.n_labels or max(c.n_labels for c in inputs.clouds)
    d = len(_kp(inputs.keypoints[0]))
    counts = np.zeros((d, n_labels), dtype=np.int64)
    tau2 = inputs.tau * inputs.tau
    for kp, cloud in zip(inputs.keypoints, inputs.clouds):
        k = _kp(kp)
        if len(k) != d:
            raise SizeMismatch(d, len(k), "keypoint counts")
        within = pairwise_sq_dists(k, cloud.points) <= tau2          # (d, N)
        for label in range(n_labels):
            counts[:, label] += np.any(within[:, cloud.labels == label], axis=1)
    return counts / len(inputs.clouds)


def keypoint_correlation(inputs: CorrelationInputs) -> float:
    """(1/L) Σ_l max_i M[i, l]."""
    m = correlation_matrix(inputs)
    return math.fsum(m.max(axis=0).tolist()) / m.shape[1]


# ─────────────────────────────────────────────────────────────
# Dual alignment score
# ─────────────────────────────────────────────────────────────
@dataclass
class DasInputs:
    reference_keypoints: KeypointsLike
    reference_annotations: AnnotationSet
    evaluation_keypoints: KeypointsLike
    evaluation_annotations: AnnotationSet
    window: float = 0.0


def _nearest_label(point: np.ndarray, ann: AnnotationSet) -> int:
    d2 = pairwise_sq_dists(point[None, :], ann.points)[0]
    return int(ann.labels[int(np.argmin(d2))])


def _matches(point: np.ndarray, label: int, ann: AnnotationSet, window: float) -> bool:
    d2 = pairwise_sq_dists(point[None, :], ann.points)[0]
    if window <= 0:
        return int(ann.labels[int(np.argmin(d2))]) == label
    dist = np.sqrt(d2)
    valid = dist <= (1.0 + window) * dist.min()
    return bool(np.any(ann.labels[valid] == label))


def das_directions(inputs: DasInputs) -> tuple:
    """(Acc(pred → anno), Acc(anno → pred))."""
    ref_k, eval_k = _kp(inputs.reference_keypoints), _kp(inputs.evaluation_keypoints)
    if len(ref_k) != len(eval_k):
        raise SizeMismatch(len(ref_k), len(eval_k), "predicted keypoint counts")
    ref_a = inputs.reference_annotations.require("reference")
    eval_a = inputs.evaluation_annotations.require("evaluation")
    w = inputs.window

    # label every predicted keypoint on the reference, check on the evaluation shape
    hits = sum(_matches(q, _nearest_label(p, ref_a), eval_a, w) for p, q in zip(ref_k, eval_k))
    forward = hits / len(ref_k)

    # every reference annotation names its nearest predicted keypoint
    owner = np.argmin(pairwise_sq_dists(ref_a.points, ref_k), axis=1)
    hits = sum(_matches(eval_k[j], int(label), eval_a, w) for j, label in zip(owner, ref_a.labels))
    backward = hits / len(ref_a)
    return forward, backward


def das(inputs: DasInputs) -> float:
    forward, backward = das_directions(inputs)
    return 0.5 * (forward + backward)


def dataset_das(
    keypoints: Sequence[KeypointsLike],
    annotations: Sequence[AnnotationSet],
    window: float = 0.0,
) -> float:
    """Mean DAS over consecutive (reference, evaluation) pairs."""
    if len(keypoints) != len(annotations):
        raise SizeMismatch(len(keypoints), len(annotations), "keypoint sets and annotations")
    if len(keypoints) < 2:
        raise TooFewSamples(len(keypoints), 2)
    scores = [
        das(DasInputs(keypoints[i], annotations[i], keypoints[i + 1], annotations[i + 1], window))
        for i in range(len(keypoints) - 1)
    ]
    return math.fsum(scores) / len(scores)


# ─────────────────────────────────────────────────────────────
# Baseline
# ─────────────────────────────────────────────────────────────
def random_keypoints(clouds: Sequence[PointCloud], d: int, seed: int) -> List[KeypointSet]:
    """
    Input points at one fixed random index pattern shared by every cloud;
    index order carries no meaning, so this is a chance-level detector.
    """
    if not clouds:
        return []
    n = min(len(c) for c in clouds)
    idx = make_rng(seed).choice(n, size=min(d, n), replace=False)
    return [KeypointSet(c.points[idx]) for c in clouds]
