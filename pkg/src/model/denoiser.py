# src/model/denoiser.py
"""
Point-wise denoiser F_θ and its EDM wrapper
D_θ(S_σ, σ, z0) = c_skip·S_σ + c_out·F_θ(c_in·S_σ, c_noise, z0).

Layout of F_θ:
  - sinusoidal embedding of c_noise → MLP ─┐
  - z0 → MLP ──────────────────────────────┴→ cond
  - points cross-attend over d keypoint tokens (Kₖ ⊕ z_aux)
  - FiLM layers, then mean-pool and re-broadcast the global summary
  - one FiLM layer over [h, pooled], linear head to 3 coordinates
Every per-point step is shared across points and the pooling is a mean,
so permuting the input points permutes the output rows the same way.
"""
from __future__ import annotations

from typing import Callable, Union

import numpy as np

from src.config.schema import EdmConfig, ModelConfig
from src.edm.schedule import precondition
from src.model.layers import Bound, activate, attention, dense, film, linear, sinusoidal_embedding
from src.model.params import ParamStore
from src.model.tape import Tape, Var
from src.utils.errors import ShapeMismatch


def _check(x_shape, z_shape, cfg: ModelConfig):
    if len(x_shape) != 2 or x_shape[1] != 3:
        raise ShapeMismatch("(N, 3)", x_shape, "noisy cloud")
    if tuple(z_shape) != (cfg.latent_dim,):
        raise ShapeMismatch((cfg.latent_dim,), tuple(z_shape), "latent z0")


def network_on(tape: Tape, bound: Bound, x_in: Var, c_noise: float, z0: Var, cfg: ModelConfig) -> Var:
    """F_θ(c_in·S_σ, c_noise, z0) → (N, 3)."""
    d, m = cfg.n_keypoints, cfg.aux_dim
    n = x_in.shape[0]

    t_emb = sinusoidal_embedding(tape, c_noise, cfg.noise_embed_dim)
    t_feat = linear(tape, bound, "den.noise.l2", dense(tape, bound, "den.noise.l1", t_emb, cfg.activation))
    z_row = tape.reshape(z0, (1, cfg.latent_dim))
    z_feat = linear(tape, bound, "den.latent.l2", dense(tape, bound, "den.latent.l1", z_row, cfg.activation))
    cond = tape.concat([t_feat, z_feat], axis=-1)                                       # (1, 2C)

    # keypoint tokens
    kp = tape.reshape(tape.gather(z0, np.arange(3 * d)), (d, 3))
    aux = tape.reshape(tape.gather(z0, np.arange(3 * d, 3 * d + m)), (1, m))
    tokens = tape.concat([kp, tape.broadcast_to(aux, (d, m))], axis=-1)
    tokens = dense(tape, bound, "den.ctx", tokens, cfg.activation)  # (d, H)

    q = tape.matmul(x_in, bound["den.xattn.wq"])
    k = tape.matmul(tokens, bound["den.xattn.wk"])
    v = tape.matmul(tokens, bound["den.xattn.wv"])
    _, ctx = attention(tape, q, k, v)                                                   # (N, H)
    h = activate(tape, tape.add(linear(tape, bound, "den.in", x_in), ctx), cfg.activation)

    for layer in range(cfg.film_depth - 1):
        h = film(tape, bound, f"den.film{layer}", h, cond, cfg.activation)

    pooled = tape.mean(h, axis=0, keepdims=True)
    h = tape.concat([h, tape.broadcast_to(pooled, (n, cfg.hidden_dim))], axis=-1)
    h = film(tape, bound, f"den.film{cfg.film_depth - 1}", h, cond, cfg.activation)
    return linear(tape, bound, "den.out", h)


def denoise_on(tape: Tape, bound: Bound, noisy: Union[Var, np.ndarray], sigma: float,
               z0: Union[Var, np.ndarray], model_cfg: ModelConfig, edm_cfg: EdmConfig) -> Var:
    """Preconditioned D_θ recorded on `tape`."""
    x = tape.lift(noisy)
    z0 = tape.lift(z0)
    _check(x.shape, z0.shape, model_cfg)
    c = precondition(sigma, edm_cfg.sigma_data)
    f = network_on(tape, bound, tape.mul(x, c.c_in), c.c_noise, z0, model_cfg)
    return tape.add(tape.mul(x, c.c_skip), tape.mul(f, c.c_out))


def denoiser_forward(noisy: np.ndarray, sigma: float, z0: np.ndarray, params: ParamStore,
                     model_cfg: ModelConfig, edm_cfg: EdmConfig) -> np.ndarray:
    """Ŝ = D_θ(S_σ, σ, z0) on plain arrays."""
    tape = Tape()
    out = denoise_on(tape, params.bind(tape), np.asarray(noisy, dtype=np.float64), sigma,
                     np.asarray(z0, dtype=np.float64), model_cfg, edm_cfg)
    return out.value.copy()


def make_denoiser(params: ParamStore, model_cfg: ModelConfig,
                  edm_cfg: EdmConfig) -> Callable[[np.ndarray, float, np.ndarray], np.ndarray]:
    """Closure usable as the sampler's `Denoiser`."""

    def _denoise(x: np.ndarray, sigma: float, z0: np.ndarray) -> np.ndarray:
        return denoiser_forward(x, sigma, z0, params, model_cfg, edm_cfg)

    return _denoise
