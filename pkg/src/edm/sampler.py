# src/edm/sampler.py
from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np

from src.config.schema import EdmConfig
from src.edm.schedule import sigma_ladder
from src.geometry.pointcloud import PointCloud

logger = logging.getLogger(__name__)

# D(x, σ, z0) -> denoised x, all arrays (N, 3)
Denoiser = Callable[[np.ndarray, float, np.ndarray], np.ndarray]


def sample_shape(
    denoiser: Denoiser,
    z0: np.ndarray,
    n_points: int,
    cfg: EdmConfig,
    rng: np.random.Generator,
    *,
    x_init: Optional[np.ndarray] = None,
) -> PointCloud:
    """
    Deterministic first-order probability-flow sampler.

    Starts from x ~ N(0, σ_max² I) and walks the log ladder with
    x ← x + (σ_next − σ)·(x − D(x, σ, z0)) / σ, ending at σ_min.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    ladder = sigma_ladder(cfg)
    x = cfg.sigma_max * rng.standard_normal((n_points, 3)) if x_init is None else np.array(x_init, dtype=np.float64)

    for sigma, sigma_next in zip(ladder[:-1], ladder[1:]):
        d = np.asarray(denoiser(x, sigma, z0), dtype=np.float64)
        x = x + (sigma_next - sigma) * (x - d) / sigma

    if not np.all(np.isfinite(x)):
        logger.warning("sampler produced non-finite coordinates (n=%d)", n_points)
    return PointCloud(x)
