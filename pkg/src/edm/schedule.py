# src/edm/schedule.py
"""
EDM noise machinery: forward noising, preconditioning, loss weighting,
the curriculum over ln σ, and the log-spaced sampling ladder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from src.config.schema import EdmConfig
from src.geometry.pointcloud import PointCloud
from src.utils.errors import NonPositiveSigma


@dataclass(frozen=True)
class PreconditionCoeffs:
    c_in: float
    c_out: float
    c_skip: float
    c_noise: float

    def to_dict(self) -> dict:
        return {"c_in": self.c_in, "c_out": self.c_out, "c_skip": self.c_skip, "c_noise": self.c_noise}


def add_noise(s0: PointCloud, sigma: float, rng: np.random.Generator) -> Tuple[PointCloud, np.ndarray]:
    """S_t = S_0 + σ ε; returns the noisy cloud and the ε that was drawn."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    eps = rng.standard_normal(s0.points.shape)
    if sigma == 0:
        return s0, eps
    return s0.with_points(s0.points + sigma * eps), eps


def precondition(sigma: float, sigma_data: float = 0.3) -> PreconditionCoeffs:
    """Input/output scalings that keep the network's input and target at unit variance."""
    if not sigma > 0:
        raise NonPositiveSigma(sigma)
    total = sigma * sigma + sigma_data * sigma_data
    c_in = 1.0 / math.sqrt(total)
    return PreconditionCoeffs(
        c_in=c_in,
        c_out=sigma * sigma_data * c_in,
        c_skip=sigma_data * sigma_data / total,
        c_noise=0.25 * math.log(sigma),
    )


def loss_weight(sigma: float, sigma_data: float = 0.3) -> float:
    """w(σ) = (σ² + σ_data²)^−2."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return (sigma * sigma + sigma_data * sigma_data) ** -2


def curriculum_params(epoch: float, total_epochs: float, cfg: EdmConfig) -> Tuple[float, float]:
    """
    (μ_n, σ_n) of the ln σ distribution at `epoch`: linear blend from the
    initial to the final values over the first curriculum_fraction of
    training, constant afterwards.
    """
    if total_epochs <= 0:
        raise ValueError("total_epochs must be > 0")
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    progress = min(epoch / (cfg.curriculum_fraction * total_epochs), 1.0)
    mu = (1.0 - progress) * cfg.mu_init + progress * cfg.mu_final
    std = (1.0 - progress) * cfg.sigma_init + progress * cfg.sigma_final
    return mu, std


def sample_sigma(
    rng: np.random.Generator,
    mu_n: float,
    sigma_n: float,
    sigma_min: float,
    sigma_max: float,
) -> float:
    """exp(N(μ_n, σ_n²)) clamped to [σ_min, σ_max]."""
    if not 0 < sigma_min <= sigma_max:
        raise ValueError(f"invalid sigma bounds [{sigma_min}, {sigma_max}]")
    log_sigma = mu_n + sigma_n * rng.standard_normal()
    return float(min(max(math.exp(log_sigma), sigma_min), sigma_max))


def sigma_ladder(cfg: EdmConfig) -> List[float]:
    """`ladder_steps` noise levels, log-uniform from σ_max down to σ_min."""
    steps = cfg.ladder_steps
    if steps < 2:
        raise ValueError("ladder_steps must be >= 2")
    ladder = np.exp(np.linspace(math.log(cfg.sigma_max), math.log(cfg.sigma_min), steps)).tolist()
    ladder[0], ladder[-1] = cfg.sigma_max, cfg.sigma_min
    return ladder
