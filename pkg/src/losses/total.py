# src/losses/total.py
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Optional

from src.config.schema import EdmConfig, LossWeights
from src.edm.schedule import loss_weight
from src.losses.terms import PointsLike, chamfer_asym, gamma_weight, kl_warmup, repulsion

TERM_ORDER = ("fps", "diff", "chamfer", "mse", "kl")


# ─────────────────────────────────────────────────────────────
# Result container
# ─────────────────────────────────────────────────────────────
@dataclass
class LossBreakdown:
    fps: float = 0.0
    diff: float = 0.0
    chamfer: float = 0.0
    mse: float = 0.0
    kl: float = 0.0
    total: float = 0.0
    weights: Dict[str, float] = field(default_factory=dict)

    def terms(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in TERM_ORDER}

    def to_dict(self) -> dict:
        out = asdict(self)
        out["weights"] = dict(self.weights)
        return out


# ─────────────────────────────────────────────────────────────
# Weight schedule
# ─────────────────────────────────────────────────────────────
def phase_weights(weights: LossWeights, step: int, epoch: int, n_init_epochs: int) -> Dict[str, float]:
    """
    λ0..λ4 for a given optimizer step and epoch. The first `n_init_epochs`
    use the bootstrap weights; λ4 always follows the KL warm-up.
    """
    if epoch < n_init_epochs:
        lam = {
            "fps": weights.init_lambda_fps,
            "diff": weights.init_lambda_diff,
            "chamfer": weights.init_lambda_chamfer,
            "mse": weights.init_lambda_mse,
        }
    else:
        lam = {
            "fps": weights.lambda_fps,
            "diff": weights.lambda_diff,
            "chamfer": weights.lambda_chamfer,
            "mse": weights.lambda_mse,
        }
    lam["kl"] = weights.lambda_kl * kl_warmup(step, weights.warmup_steps)
    return lam


def weighted_sum(terms: Mapping[str, float], lam: Mapping[str, float]) -> float:
    total = 0.0
    for name in TERM_ORDER:
        total += lam[name] * terms.get(name, 0.0)
    return total


def total_loss(
    terms: Mapping[str, float],
    weights: LossWeights,
    step: int,
    epoch: int,
    n_init_epochs: int = 0,
) -> LossBreakdown:
    """Weighted total ℒ = Σ λᵢ·termᵢ with the phase/warm-up schedule applied."""
    lam = phase_weights(weights, step, epoch, n_init_epochs)
    values = {name: float(terms.get(name, 0.0)) for name in TERM_ORDER}
    return LossBreakdown(**values, total=weighted_sum(values, lam), weights=lam)


# ─────────────────────────────────────────────────────────────
# Reconstruction objective on arrays
# ─────────────────────────────────────────────────────────────
def diffusion_loss(
    pred: PointsLike,
    target: PointsLike,
    sigma: float,
    weights: LossWeights,
    edm: Optional[EdmConfig] = None,
) -> Dict[str, float]:
    """
    ℒ_diff for one denoised prediction: w(σ)·ℒ_CD(pred, target)
    + ρ·γ(σ)·ℒ_repel(pred). Returns the parts and their sum.
    """
    edm = edm or EdmConfig()
    cd = chamfer_asym(pred, target, weights.alpha, weights.beta)
    rep = repulsion(pred, weights.k_nn, weights.margin)
    w = loss_weight(sigma, edm.sigma_data)
    g = gamma_weight(sigma, edm.sigma_data)
    return {
        "chamfer_asym": cd,
        "repulsion": rep,
        "w_sigma": w,
        "gamma_sigma": g,
        "diff": w * cd + weights.rho * g * rep,
    }
