# src/model/params.py
from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from src.config.schema import ModelConfig
from src.geometry.pointcloud import make_rng
from src.model.tape import Tape, Var

ENCODER_PREFIX = "enc."
DENOISER_PREFIX = "den."


class ParamStore:
    """
    Named float64 tensors of the encoder and denoiser.

    Non-trainable tensors (the Fourier frequency matrix) are bound as
    constants and never updated by the optimizer.
    """

    def __init__(self, tensors: Optional[Dict[str, np.ndarray]] = None, frozen: Iterable[str] = ()):
        self.tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, value in (tensors or {}).items():
            self.tensors[name] = np.array(value, dtype=np.float64)
        self.frozen = set(frozen)

    # ---------- mapping api --------------------------------
    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray):
        self.tensors[name] = np.array(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self, prefix: str = "") -> List[str]:
        return [n for n in self.tensors if n.startswith(prefix)]

    def trainable_names(self) -> List[str]:
        return [n for n in self.tensors if n not in self.frozen]

    def n_parameters(self, trainable_only: bool = True) -> int:
        names = self.trainable_names() if trainable_only else list(self.tensors)
        return int(sum(self.tensors[n].size for n in names))

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.tensors.items()}, self.frozen)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self.tensors.items()}

    # ---------- tape binding -------------------------------
    def bind(self, tape: Tape) -> Dict[str, Var]:
        """Record every tensor on `tape`; frozen ones as constants."""
        bound: Dict[str, Var] = {}
        for name, value in self.tensors.items():
            if name in self.frozen:
                bound[name] = tape.constant(value)
            else:
                bound[name] = tape.leaf(value, name=name)
        return bound

    def gradients(self, tape: Tape, bound: Dict[str, Var], grads) -> Dict[str, np.ndarray]:
        """Per-parameter gradients (zeros where the output does not depend on it)."""
        return {n: tape.grad(grads, bound[n]) for n in self.trainable_names()}


# ─────────────────────────────────────────────────────────────
# Initialisation
# ─────────────────────────────────────────────────────────────
def _dense(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = np.sqrt(2.0)) -> np.ndarray:
    return rng.standard_normal((fan_in, fan_out)) * (gain / np.sqrt(fan_in))


def _linear(out: Dict[str, np.ndarray], rng, name: str, fan_in: int, fan_out: int, gain: float = np.sqrt(2.0)):
    out[f"{name}.w"] = _dense(rng, fan_in, fan_out, gain)
    out[f"{name}.b"] = np.zeros(fan_out)


def encoder_shapes(cfg: ModelConfig) -> Dict[str, int]:
    fourier = 2 * cfg.fourier_features
    return {"fourier": fourier, "backbone_in": 3 + fourier, "embed_in": cfg.feature_dim + fourier}


def init_params(cfg: ModelConfig, seed: int) -> ParamStore:
    """Seeded initialisation of every encoder and denoiser tensor."""
    enc_rng = make_rng(seed, 0)
    den_rng = make_rng(seed, 1)
    t: Dict[str, np.ndarray] = OrderedDict()

    # encoder
    dims = encoder_shapes(cfg)
    F, D = cfg.feature_dim, cfg.embed_dim
    t["enc.fourier"] = enc_rng.standard_normal((3, cfg.fourier_features)) * cfg.fourier_scale
    _linear(t, enc_rng, "enc.backbone.l1", dims["backbone_in"], F)
    _linear(t, enc_rng, "enc.backbone.l2", F, F)
    _linear(t, enc_rng, "enc.embed", dims["embed_in"], D, gain=1.0)
    t["enc.queries"] = enc_rng.standard_normal((cfg.n_keypoints, D)) * cfg.query_scale
    t["enc.attn.wq"] = _dense(enc_rng, D, D, 1.0)
    t["enc.attn.wk"] = _dense(enc_rng, D, D, 1.0)
    t["enc.attn.wv"] = _dense(enc_rng, D, D, 1.0)
    _linear(t, enc_rng, "enc.aux.l1", D, D)
    _linear(t, enc_rng, "enc.aux.mu", D, cfg.aux_dim, gain=0.1)
    _linear(t, enc_rng, "enc.aux.logvar", D, cfg.aux_dim, gain=0.1)

    # denoiser
    H, C, E = cfg.hidden_dim, cfg.cond_dim, cfg.noise_embed_dim
    _linear(t, den_rng, "den.noise.l1", E, C)
    _linear(t, den_rng, "den.noise.l2", C, C, gain=1.0)
    _linear(t, den_rng, "den.latent.l1", cfg.latent_dim, C)
    _linear(t, den_rng, "den.latent.l2", C, C, gain=1.0)
    _linear(t, den_rng, "den.ctx", 3 + cfg.aux_dim, H)
    t["den.xattn.wq"] = _dense(den_rng, 3, H, 1.0)
    t["den.xattn.wk"] = _dense(den_rng, H, H, 1.0)
    t["den.xattn.wv"] = _dense(den_rng, H, H, 1.0)
    _linear(t, den_rng, "den.in", 3, H)
    for layer in range(cfg.film_depth):
        fan_in = 2 * H if layer == cfg.film_depth - 1 else H
        _linear(t, den_rng, f"den.film{layer}", fan_in, H)
        # FiLM heads start near identity: scale ≈ 1, shift ≈ 0
        _linear(t, den_rng, f"den.film{layer}.gamma", 2 * C, H, gain=0.1)
        _linear(t, den_rng, f"den.film{layer}.beta", 2 * C, H, gain=0.1)
    _linear(t, den_rng, "den.out", H, 3, gain=0.1)

    return ParamStore(t, frozen={"enc.fourier"})
