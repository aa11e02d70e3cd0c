# src/model/objective.py
"""
Per-sample training objective on the tape.

The differentiable Chamfer/repulsion terms reuse the nearest-neighbour
indices of src.geometry.neighbors and gather the matched rows on the
tape, so their values equal the array versions in src.losses.terms up
to summation order. The decoder is conditioned on a stop-gradient copy
of z0: ℒ_diff trains the denoiser only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Union

import numpy as np

from src.config.schema import Config
from src.deform.deformations import sample_chain
from src.edm.schedule import curriculum_params, loss_weight, sample_sigma
from src.geometry.neighbors import knn, nearest
from src.geometry.pointcloud import PointCloud
from src.geometry.sampling import fps
from src.losses.terms import gamma_weight
from src.losses.total import TERM_ORDER
from src.model.denoiser import denoise_on
from src.model.encoder import encode_on
from src.model.latent import assemble_latent_on, reparameterize_on, soft_project_on
from src.model.layers import Bound
from src.model.tape import Tape, Var
from src.utils.errors import TooFewPoints

# keeps sqrt differentiable for coincident neighbours
_DIST_EPS = 1e-18


# ─────────────────────────────────────────────────────────────
# Differentiable loss terms
# ─────────────────────────────────────────────────────────────
def chamfer_oneway_on(tape: Tape, a: Union[Var, np.ndarray], b: Union[Var, np.ndarray]) -> Var:
    """d(A→B) with the nearest assignment fixed at the current values."""
    a, b = tape.lift(a), tape.lift(b)
    idx, _ = nearest(a.value, b.value)
    diff = tape.sub(a, tape.gather(b, idx))
    return tape.mean(tape.sum(tape.mul(diff, diff), axis=-1))


def repulsion_on(tape: Tape, pred: Var, k_nn: int, margin: float) -> Var:
    n = pred.shape[0]
    if n <= k_nn:
        raise TooFewPoints(n, k_nn)
    idx = knn(pred.value, k_nn)
    diff = tape.sub(tape.reshape(pred, (n, 1, 3)), tape.gather(pred, idx))
    dist = tape.sqrt(tape.add(tape.sum(tape.mul(diff, diff), axis=-1), _DIST_EPS))
    return tape.mean(tape.relu(tape.sub(margin, dist)))


def fps_anchor_on(tape: Tape, keypoints: Var, anchors: np.ndarray, direction: str) -> Var:
    if direction == "keypoints_to_anchors":
        return chamfer_oneway_on(tape, keypoints, anchors)
    if direction == "anchors_to_keypoints":
        return chamfer_oneway_on(tape, anchors, keypoints)
    both = tape.add(chamfer_oneway_on(tape, keypoints, anchors), chamfer_oneway_on(tape, anchors, keypoints))
    return tape.mul(both, 0.5)


def consistency_on(tape: Tape, transformed: Var, deformed: Var) -> Var:
    diff = tape.sub(transformed, deformed)
    return tape.mean(tape.sum(tape.mul(diff, diff), axis=-1))


def kl_on(tape: Tape, mu: Var, logvar: Var) -> Var:
    inner = tape.sub(tape.add(tape.mul(mu, mu), tape.exp(logvar)), tape.add(logvar, 1.0))
    return tape.mul(tape.sum(inner), 0.5)


# ─────────────────────────────────────────────────────────────
# Sample draw
# ─────────────────────────────────────────────────────────────
@dataclass
class SampleDraw:
    """Every random quantity of one training sample, drawn up front."""
    source: np.ndarray          # S0
    deformed: np.ndarray        # 𝒯(S0)
    matrix: np.ndarray          # composed 3×3 map of 𝒯
    anchors: np.ndarray         # FPS anchors on S0
    sigma: float
    noise: np.ndarray           # ε of S_t = S0 + σε
    latent_noise: np.ndarray    # ε of the reparameterization


def draw_sample(pc: PointCloud, rng: np.random.Generator, cfg: Config, progress: float) -> SampleDraw:
    """
    Deformation pair, FPS anchors, σ from the curriculum at fractional
    epoch `progress`, and the Gaussian draws, all from `rng`.
    """
    chain = sample_chain(rng, cfg.deform)
    matrix = chain.compose(pc)
    anchors, _ = fps(pc, cfg.loss.n_anchors, seed=int(rng.integers(2**63)))
    mu_n, std_n = curriculum_params(progress, cfg.train.epochs, cfg.edm)
    sigma = sample_sigma(rng, mu_n, std_n, cfg.edm.sigma_min, cfg.edm.sigma_max)
    return SampleDraw(
        source=pc.points,
        deformed=pc.points @ matrix.T,
        matrix=matrix,
        anchors=anchors.keypoints,
        sigma=sigma,
        noise=rng.standard_normal(pc.points.shape),
        latent_noise=rng.standard_normal(cfg.model.aux_dim),
    )


# ─────────────────────────────────────────────────────────────
# Objective
# ─────────────────────────────────────────────────────────────
@dataclass
class SampleLoss:
    total: Var
    terms: Dict[str, Var]
    z0: Var
    denoised: Var

    def values(self) -> Dict[str, float]:
        return {name: float(v.value) for name, v in self.terms.items()}


def sample_objective(
    tape: Tape,
    bound: Bound,
    draw: SampleDraw,
    lam: Mapping[str, float],
    cfg: Config,
    fixed_latent: Optional[np.ndarray] = None,
) -> SampleLoss:
    """
    ℒ = λ0ℒ_fps + λ1ℒ_diff + λ2ℒ_chamfer + λ3ℒ_mse + λ4ℒ_KL for one sample.

    `fixed_latent` replaces the encoder-derived z0 (finite-difference checks
    hold the stop-gradient input constant this way).
    """
    mc, lw, ec = cfg.model, cfg.loss, cfg.edm

    enc = encode_on(tape, bound, draw.source, mc)
    enc_d = encode_on(tape, bound, draw.deformed, mc)
    keypoints = enc.keypoints

    terms: Dict[str, Var] = {}
    terms["fps"] = fps_anchor_on(tape, keypoints, draw.anchors, lw.fps_direction)
    terms["chamfer"] = chamfer_oneway_on(tape, keypoints, draw.source)
    transformed = tape.matmul(keypoints, draw.matrix.T)
    terms["mse"] = consistency_on(tape, transformed, enc_d.keypoints)
    terms["kl"] = kl_on(tape, enc.mu, enc.logvar)

    if fixed_latent is None:
        z_aux = reparameterize_on(tape, enc.mu, enc.logvar, draw.latent_noise, mc.logvar_min, mc.logvar_max)
        projected = soft_project_on(tape, keypoints, draw.source, mc.soft_projection_tau)
        z0 = tape.stop_gradient(assemble_latent_on(tape, projected, z_aux))
    else:
        z0 = tape.constant(fixed_latent)

    noisy = draw.source + draw.sigma * draw.noise
    denoised = denoise_on(tape, bound, noisy, draw.sigma, z0, mc, ec)
    cd = tape.add(tape.mul(chamfer_oneway_on(tape, denoised, draw.source), lw.alpha),
                  tape.mul(chamfer_oneway_on(tape, draw.source, denoised), lw.beta))
    rep = repulsion_on(tape, denoised, lw.k_nn, lw.margin)
    w = loss_weight(draw.sigma, ec.sigma_data)
    g = gamma_weight(draw.sigma, ec.sigma_data)
    terms["diff"] = tape.add(tape.mul(cd, w), tape.mul(rep, lw.rho * g))

    total = None
    for name in TERM_ORDER:
        weighted = tape.mul(terms[name], float(lam[name]))
        total = weighted if total is None else tape.add(total, weighted)

    return SampleLoss(total=total, terms=terms, z0=z0, denoised=denoised)


def is_finite(loss: SampleLoss) -> bool:
    return all(math.isfinite(float(v.value)) for v in loss.terms.values()) and math.isfinite(float(loss.total.value))
