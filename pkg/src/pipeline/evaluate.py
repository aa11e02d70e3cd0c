# src/pipeline/evaluate.py
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np

from src.config.schema import Config
from src.deform.deformations import apply, sample_chain
from src.edm.sampler import sample_shape
from src.geometry.annotations import AnnotationSet
from src.geometry.pointcloud import KeypointSet, LabeledPointCloud, PointCloud, make_rng
from src.losses.terms import deformation_consistency
from src.metrics.distances import chamfer_symmetric, reconstruction_scores
from src.metrics.semantic import CorrelationInputs, dataset_das, keypoint_correlation, random_keypoints
from src.model.denoiser import make_denoiser
from src.model.encoder import encode
from src.model.latent import assemble_latent, soft_project
from src.model.params import ParamStore
from src.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

# stream id for the held-out deformation draws
_EVAL_STREAM = 5


def predict_keypoints(params: ParamStore, clouds: Sequence[PointCloud], cfg: Config, threads: int = 1) -> List[KeypointSet]:
    return ordered_map(lambda pc: encode(pc, params, cfg.model).keypoints, clouds, threads)


def consistency_mse(params: ParamStore, clouds: Sequence[PointCloud], cfg: Config, threads: int = 1) -> float:
    """Mean ℒ_mse between 𝒯(K) and the keypoints of 𝒯(S) over `clouds`, one seeded 𝒯 each."""

    def one(item) -> float:
        i, pc = item
        chain = sample_chain(make_rng(cfg.seed, _EVAL_STREAM, i), cfg.deform)
        k = encode(pc, params, cfg.model).keypoints
        k_d = encode(apply(chain, pc), params, cfg.model).keypoints
        return deformation_consistency(k.keypoints @ chain.compose(pc).T, k_d)

    values = ordered_map(one, list(enumerate(clouds)), threads)
    return math.fsum(values) / len(values)


@dataclass
class KeypointReport:
    das: float
    das_random: float
    correlation: Optional[float]
    correlation_random: Optional[float]
    consistency_mse: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_keypoints(
    params: ParamStore,
    clouds: Sequence[PointCloud],
    annotations: Sequence[AnnotationSet],
    cfg: Config,
    threads: int = 1,
) -> KeypointReport:
    """DAS, correlation (when clouds carry labels) and ℒ_mse, each next to the random baseline."""
    predicted = predict_keypoints(params, clouds, cfg, threads)
    baseline = random_keypoints(clouds, cfg.model.n_keypoints, cfg.seed)
    window = cfg.metrics.das_window

    corr = corr_random = None
    if all(isinstance(c, LabeledPointCloud) for c in clouds):
        corr = keypoint_correlation(CorrelationInputs(predicted, clouds, cfg.metrics.corr_tau))
        corr_random = keypoint_correlation(CorrelationInputs(baseline, clouds, cfg.metrics.corr_tau))

    return KeypointReport(
        das=dataset_das(predicted, annotations, window),
        das_random=dataset_das(baseline, annotations, window),
        correlation=corr,
        correlation_random=corr_random,
        consistency_mse=consistency_mse(params, clouds, cfg, threads),
    )


def reconstruct(params: ParamStore, pc: PointCloud, cfg: Config, rng: np.random.Generator) -> PointCloud:
    """Encode, condition on the soft-projected keypoints and μ, decode at the input size."""
    out = encode(pc, params, cfg.model)
    projected = soft_project(out.keypoints, pc, cfg.model.soft_projection_tau)
    z0 = assemble_latent(projected, out.mu)
    return sample_shape(make_denoiser(params, cfg.model, cfg.edm), z0, len(pc), cfg.edm, rng)


def reconstruction_report(params: ParamStore, clouds: Sequence[PointCloud], cfg: Config, threads: int = 1) -> dict:
    """Mean symmetric CD and EMD between shapes and their reconstructions."""

    def one(item) -> dict:
        i, pc = item
        rec = reconstruct(params, pc, cfg, make_rng(cfg.seed, 9, i))
        return reconstruction_scores(pc, rec, cfg.metrics.emd_exact_cap)

    rows = ordered_map(one, list(enumerate(clouds)), threads)
    emds = [r["emd"] for r in rows if r["emd"] is not None]
    return {
        "cd": math.fsum(r["cd"] for r in rows) / len(rows),
        "emd": math.fsum(emds) / len(emds) if emds else None,
        "count": len(rows),
    }


def path_continuity(shapes: Sequence[PointCloud]) -> dict:
    """
    Symmetric CD between consecutive shapes of an interpolation path.
    `ratio` is max/median of those distances (0 when the path does not move).
    """
    if len(shapes) < 2:
        raise ValueError(f"continuity needs at least 2 shapes, got {len(shapes)}")
    steps = [chamfer_symmetric(a.points, b.points) for a, b in zip(shapes[:-1], shapes[1:])]
    largest, median = max(steps), float(np.median(steps))
    return {
        "adjacent_cd": steps,
        "max": largest,
        "median": median,
        "ratio": largest / median if median > 0 else (0.0 if largest == 0 else math.inf),
    }
