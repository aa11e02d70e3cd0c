# src/model/latent.py
from __future__ import annotations

from typing import Tuple, Union

import numpy as np

from src.geometry.pointcloud import KeypointSet, PointCloud
from src.model.tape import Tape, Var
from src.utils.errors import EmptyCloud, ShapeMismatch

LOGVAR_FLOOR = -30.0
LOGVAR_CEIL = 10.0

# keeps sqrt differentiable when a keypoint sits exactly on a surface point
_DIST_EPS = 1e-24


# ─────────────────────────────────────────────────────────────
# Reparameterization
# ─────────────────────────────────────────────────────────────
def reparameterize_on(tape: Tape, mu: Var, logvar: Var, eps: np.ndarray,
                      lo: float = LOGVAR_FLOOR, hi: float = LOGVAR_CEIL) -> Var:
    """z = μ + exp(½ log σ²) ⊙ ε with ε supplied by the caller."""
    std = tape.exp(tape.mul(tape.clip(logvar, lo, hi), 0.5))
    return tape.add(mu, tape.mul(std, eps))


def reparameterize(mu: np.ndarray, logvar: np.ndarray, rng: np.random.Generator,
                   lo: float = LOGVAR_FLOOR, hi: float = LOGVAR_CEIL) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeMismatch(mu.shape, logvar.shape, "logvar")
    eps = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * np.clip(logvar, lo, hi)) * eps


# ─────────────────────────────────────────────────────────────
# Soft projection onto the surface
# ─────────────────────────────────────────────────────────────
def soft_project_on(tape: Tape, keypoints: Var, surface: Union[Var, np.ndarray], tau: float) -> Var:
    """
    K̃ₖ = Σᵢ wₖᵢ sᵢ with wₖ = softmax(−‖Kₖ − sᵢ‖ / τ); differentiable in
    both the keypoints and the surface.
    """
    if not tau > 0:
        raise ValueError(f"soft projection temperature must be > 0, got {tau}")
    surface = tape.lift(surface)
    d, n = keypoints.shape[0], surface.shape[0]
    if n == 0:
        raise EmptyCloud("projection surface")
    diff = tape.sub(tape.reshape(keypoints, (d, 1, 3)), tape.reshape(surface, (1, n, 3)))
    dist = tape.sqrt(tape.add(tape.sum(tape.mul(diff, diff), axis=-1), _DIST_EPS))
    weights = tape.softmax(tape.mul(dist, -1.0 / tau), axis=-1)
    return tape.matmul(weights, surface)


def soft_project(keypoints: Union[KeypointSet, np.ndarray], surface: Union[PointCloud, np.ndarray],
                 tau: float) -> KeypointSet:
    k = keypoints.keypoints if isinstance(keypoints, KeypointSet) else np.asarray(keypoints, dtype=np.float64)
    s = surface.points if isinstance(surface, PointCloud) else np.asarray(surface, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] == 0:
        raise EmptyCloud("projection surface")
    tape = Tape()
    return KeypointSet(soft_project_on(tape, tape.constant(k), s, tau).value)


# ─────────────────────────────────────────────────────────────
# Latent assembly
# ─────────────────────────────────────────────────────────────
def assemble_latent(keypoints: Union[KeypointSet, np.ndarray], z_aux: np.ndarray) -> np.ndarray:
    """z0 = vec(K) ⊕ z_aux, row-major; length 3d + m."""
    k = keypoints.keypoints if isinstance(keypoints, KeypointSet) else np.asarray(keypoints, dtype=np.float64)
    z = np.asarray(z_aux, dtype=np.float64)
    if k.ndim != 2 or k.shape[1] != 3:
        raise ShapeMismatch("(d, 3)", k.shape, "keypoints")
    if z.ndim != 1:
        raise ShapeMismatch("(m,)", z.shape, "auxiliary latent")
    return np.concatenate([k.reshape(-1), z])


def assemble_latent_on(tape: Tape, keypoints: Var, z_aux: Var) -> Var:
    d = keypoints.shape[0]
    return tape.concat([tape.reshape(keypoints, (3 * d,)), z_aux], axis=0)


def split_latent(z0: np.ndarray, n_keypoints: int) -> Tuple[KeypointSet, np.ndarray]:
    """Inverse of `assemble_latent` for a known keypoint count."""
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.ndim != 1 or z0.size <= 3 * n_keypoints:
        raise ShapeMismatch(f"(3·{n_keypoints} + m,)", z0.shape, "latent")
    return KeypointSet(z0[:3 * n_keypoints].reshape(n_keypoints, 3)), z0[3 * n_keypoints:].copy()
