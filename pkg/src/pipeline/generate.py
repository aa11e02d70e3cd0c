# src/pipeline/generate.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config.schema import Config
from src.edm.sampler import sample_shape
from src.geometry.pointcloud import KeypointSet, PointCloud, make_rng
from src.model.denoiser import make_denoiser
from src.model.encoder import encode
from src.model.latent import assemble_latent, reparameterize, soft_project
from src.model.params import ParamStore
from src.pipeline.prior import KeypointPrior, fit_prior, sample_keypoints
from src.utils.errors import ShapeMismatch
from src.utils.parallel import ordered_map

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────────────────────
# Keypoint bank of a trained model
# ─────────────────────────────────────────────────────────────
@dataclass
class KeypointBank:
    """Conditioning keypoints (soft-projected) and auxiliary latents of a set of shapes."""
    keypoints: List[KeypointSet]
    mu: List[np.ndarray]
    z: List[np.ndarray]


def collect_keypoints(params: ParamStore, clouds: Sequence[PointCloud], cfg: Config, threads: int = 1) -> KeypointBank:
    mc = cfg.model

    def one(item: Tuple[int, PointCloud]):
        i, pc = item
        out = encode(pc, params, mc)
        projected = soft_project(out.keypoints, pc, mc.soft_projection_tau)
        z = reparameterize(out.mu, out.logvar, make_rng(cfg.seed, 7, i), mc.logvar_min, mc.logvar_max)
        return projected, out.mu, z

    rows = ordered_map(one, list(enumerate(clouds)), threads)
    return KeypointBank([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows])


def fit_prior_from_model(params: ParamStore, clouds: Sequence[PointCloud], cfg: Config, threads: int = 1) -> KeypointPrior:
    bank = collect_keypoints(params, clouds, cfg, threads)
    aux = bank.mu if cfg.prior.aux_source == "mu_mean" else bank.z
    return fit_prior(bank.keypoints, aux, cfg.prior.variance_retained, cfg.prior.bandwidth)


# ─────────────────────────────────────────────────────────────
# Decoding
# ─────────────────────────────────────────────────────────────
def decode(
    keypoints: Union[KeypointSet, np.ndarray],
    z_aux: np.ndarray,
    params: ParamStore,
    cfg: Config,
    n_points: int,
    rng: np.random.Generator,
) -> PointCloud:
    """Run the sampler conditioned on z0 = vec(K) ⊕ z_aux."""
    z0 = assemble_latent(keypoints, z_aux)
    return sample_shape(make_denoiser(params, cfg.model, cfg.edm), z0, n_points, cfg.edm, rng)


def generate(
    prior: KeypointPrior,
    params: ParamStore,
    cfg: Config,
    n_points: int,
    count: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    threads: int = 1,
) -> List[PointCloud]:
    """
    `count` unconditional shapes (default: as many as the prior's training
    set). Shape i draws keypoints and sampler noise from its own stream.
    """
    count = prior.n_train if count is None else count
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if count == 0:
        return []
    rng = rng or make_rng(cfg.seed)
    base = int(rng.integers(2**63))

    def one(i: int) -> PointCloud:
        shape_rng = make_rng(base, i)
        keypoints = sample_keypoints(prior, shape_rng)
        return decode(keypoints, prior.aux_mean, params, cfg, n_points, shape_rng)

    shapes = ordered_map(one, range(count), threads)
    logger.info("generated %d shapes of %d points", count, n_points)
    return shapes


def interpolate(
    keypoints_a: Union[KeypointSet, np.ndarray],
    keypoints_b: Union[KeypointSet, np.ndarray],
    z_aux: np.ndarray,
    steps: int,
    params: ParamStore,
    cfg: Config,
    n_points: int,
    seed: int = 0,
    threads: int = 1,
) -> Tuple[List[KeypointSet], List[PointCloud]]:
    """
    K(t) = (1 − t)·K_a + t·K_b at `steps` uniform t in [0, 1], each decoded
    with the same z_aux and the same sampler noise (make_rng(seed)).
    """
    ka = keypoints_a.keypoints if isinstance(keypoints_a, KeypointSet) else np.asarray(keypoints_a, dtype=np.float64)
    kb = keypoints_b.keypoints if isinstance(keypoints_b, KeypointSet) else np.asarray(keypoints_b, dtype=np.float64)
    if ka.shape != kb.shape:
        raise ShapeMismatch(ka.shape, kb.shape, "interpolation endpoints")
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")

    path = [KeypointSet((1.0 - t) * ka + t * kb) for t in np.linspace(0.0, 1.0, steps)]
    shapes = ordered_map(lambda k: decode(k, z_aux, params, cfg, n_points, make_rng(seed)), path, threads)
    return path, shapes
