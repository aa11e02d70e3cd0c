# src/model/encoder.py
"""
Keypoint encoder.

Per-point features come from a two-layer network over [x, γ(x)]. The d
learnable queries attend over all N points; every attention row is a
probability vector, so each keypoint Kₖ = Σᵢ a_{ki} xᵢ lies in the
convex hull of the input. The attention outputs are pooled into h_aux,
which a small head maps to the auxiliary Gaussian (μ, log σ²).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from src.config.schema import ModelConfig
from src.geometry.pointcloud import KeypointSet, PointCloud
from src.model.layers import Bound, attention, dense, fourier_features, linear
from src.model.params import ParamStore
from src.model.tape import Tape, Var
from src.utils.errors import TooFewPoints


@dataclass
class EncoderVars:
    """Encoder outputs as tape variables."""
    keypoints: Var      # (d, 3)
    attention: Var      # (d, N)
    mu: Var             # (m,)
    logvar: Var         # (m,)
    h_aux: Var          # (1, D)


@dataclass
class EncoderOutput:
    keypoints: KeypointSet
    attention: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray

    def to_dict(self) -> dict:
        return {
            "keypoints": self.keypoints.keypoints.tolist(),
            "mu": self.mu.tolist(),
            "logvar": self.logvar.tolist(),
        }


def _points(pc: Union[PointCloud, np.ndarray]) -> np.ndarray:
    return pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)


def keypoints_from_attention(tape: Tape, weights: Var, points: Var) -> Var:
    """Kₖ = Σᵢ a_{ki} xᵢ."""
    return tape.matmul(weights, points)


def encode_on(tape: Tape, bound: Bound, points: np.ndarray, cfg: ModelConfig) -> EncoderVars:
    """Encoder forward pass recorded on `tape`."""
    n = len(points)
    if n < cfg.n_keypoints:
        raise TooFewPoints(n, cfg.n_keypoints - 1)

    x = tape.constant(points)
    gamma = fourier_features(tape, x, bound["enc.fourier"])

    h = dense(tape, bound, "enc.backbone.l1", tape.concat([x, gamma], axis=-1), cfg.activation)
    h = dense(tape, bound, "enc.backbone.l2", h, cfg.activation)
    emb = linear(tape, bound, "enc.embed", tape.concat([h, gamma], axis=-1))        # (N, D)

    q = tape.matmul(bound["enc.queries"], bound["enc.attn.wq"])                     # (d, D)
    k = tape.matmul(emb, bound["enc.attn.wk"])
    v = tape.matmul(emb, bound["enc.attn.wv"])
    weights, out = attention(tape, q, k, v)                                          # (d, N), (d, D)

    keypoints = keypoints_from_attention(tape, weights, x)

    if cfg.pooling == "max":
        h_aux = tape.max(out, axis=0, keepdims=True)
    else:
        h_aux = tape.mean(out, axis=0, keepdims=True)
    hid = dense(tape, bound, "enc.aux.l1", h_aux, cfg.activation)
    mu = tape.reshape(linear(tape, bound, "enc.aux.mu", hid), (cfg.aux_dim,))
    logvar = tape.clip(linear(tape, bound, "enc.aux.logvar", hid), cfg.logvar_min, cfg.logvar_max)
    logvar = tape.reshape(logvar, (cfg.aux_dim,))

    return EncoderVars(keypoints=keypoints, attention=weights, mu=mu, logvar=logvar, h_aux=h_aux)


def encode(
    pc: Union[PointCloud, np.ndarray],
    params: ParamStore,
    cfg: ModelConfig,
    tape: Optional[Tape] = None,
) -> EncoderOutput:
    """Forward pass returning plain arrays (K, attention weights, μ, log σ²)."""
    tape = tape or Tape()
    out = encode_on(tape, params.bind(tape), _points(pc), cfg)
    return EncoderOutput(
        keypoints=KeypointSet(out.keypoints.value),
        attention=out.attention.value.copy(),
        mu=out.mu.value.copy(),
        logvar=out.logvar.value.copy(),
    )
