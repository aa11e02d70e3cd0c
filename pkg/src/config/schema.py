# src/config/schema.py
from __future__ import annotations

import hashlib
import json
import math
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

PROFILE_DIR = Path(__file__).parent


class DeformKind(str, Enum):
    """Deformation kinds, listed in application order."""
    STRETCH = "stretch"
    BEND = "bend"
    TWIST = "twist"
    TAPER = "taper"
    ROTATE = "rotate"


DEFORM_ORDER = [k for k in DeformKind]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DeformConfig(_Section):
    """Ranges of the structured deformation family."""

    stretch_max: float = Field(2.2, ge=1.0)
    bend_max: float = Field(1.8, ge=0.0)
    twist_max: float = Field(1.9, ge=0.0)
    taper_max: float = Field(1.6, ge=0.0)
    rotate_max: float = Field(math.pi / 6, ge=0.0, le=math.pi)

    # subset toggle for ablations; order is always the canonical one
    kinds: List[DeformKind] = Field(default_factory=lambda: list(DEFORM_ORDER))
    # x̄ for the twist: cloud after stretch+bend, or the untouched input
    twist_reference: Literal["intermediate", "original"] = "intermediate"

    @field_validator("kinds")
    def kinds_unique(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("deformation kinds must be unique")
        return v


class LossWeights(_Section):
    """Weights and shape parameters of every training loss term."""

    # post-bootstrap weights (after n_init epochs)
    lambda_fps: float = Field(0.0, ge=0)
    lambda_diff: float = Field(3.0, ge=0)
    lambda_chamfer: float = Field(1.0, ge=0)
    lambda_mse: float = Field(1.0, ge=0)
    lambda_kl: float = Field(1.0, ge=0)          # ceiling of the warm-up ramp

    # bootstrap weights for the first n_init epochs
    init_lambda_fps: float = Field(1.0, ge=0)
    init_lambda_diff: float = Field(3.0, ge=0)
    init_lambda_chamfer: float = Field(1.0, ge=0)
    init_lambda_mse: float = Field(1.0, ge=0)

    alpha: float = Field(0.5, gt=0)               # precision weight
    beta: float = Field(1.0, gt=0)                # coverage weight
    rho: float = Field(0.1, ge=0)                 # repulsion strength
    margin: float = Field(0.05, gt=0)             # repulsion margin m
    k_nn: int = Field(4, ge=1)
    warmup_steps: int = Field(1000, ge=1)
    n_init_fraction: float = Field(0.1, ge=0, le=1)

    n_anchors: int = Field(20, ge=1)
    fps_direction: Literal["symmetric", "keypoints_to_anchors", "anchors_to_keypoints"] = "symmetric"

    @model_validator(mode="after")
    def coverage_outweighs_precision(self):
        if self.beta <= self.alpha:
            raise ValueError(f"beta ({self.beta}) must exceed alpha ({self.alpha})")
        return self


class EdmConfig(_Section):
    """Noise range, preconditioning and curriculum of the shape diffusion."""

    sigma_min: float = Field(0.002, gt=0)
    sigma_max: float = Field(80.0, gt=0)
    sigma_data: float = Field(0.3, gt=0)

    mu_init: float = -2.0
    sigma_init: float = Field(0.6, ge=0)
    mu_final: float = -1.2
    sigma_final: float = Field(1.2, ge=0)
    curriculum_fraction: float = Field(0.8, gt=0, le=1)

    ladder_steps: int = Field(64, ge=2)

    @model_validator(mode="after")
    def sigma_range_ordered(self):
        if not self.sigma_min < self.sigma_max:
            raise ValueError(f"sigma_min ({self.sigma_min}) must be < sigma_max ({self.sigma_max})")
        return self


class ModelConfig(_Section):
    """Widths of the toy encoder/denoiser."""

    n_keypoints: int = Field(10, ge=1)
    aux_dim: int = Field(5, ge=1)

    feature_dim: int = Field(64, ge=1)        # per-point backbone width
    embed_dim: int = Field(64, ge=1)          # D, query/embedding width
    fourier_features: int = Field(16, ge=1)   # columns of the frequency matrix
    fourier_scale: float = Field(1.0, gt=0)   # std of the random frequencies
    query_scale: float = Field(1.0, gt=0)     # init std of the learnable queries
    pooling: Literal["mean", "max"] = "mean"
    activation: Literal["silu", "relu"] = "silu"

    hidden_dim: int = Field(64, ge=1)         # denoiser per-point width
    cond_dim: int = Field(32, ge=1)           # width of each conditioning branch
    noise_embed_dim: int = Field(16, ge=2)
    film_depth: int = Field(3, ge=2)

    soft_projection_tau: float = Field(0.02, gt=0)
    logvar_min: float = -30.0
    logvar_max: float = 10.0

    @field_validator("noise_embed_dim")
    def even_embedding(cls, v):
        if v % 2:
            raise ValueError("noise_embed_dim must be even (sin/cos halves)")
        return v

    @property
    def latent_dim(self) -> int:
        return 3 * self.n_keypoints + self.aux_dim


class MetricConfig(_Section):
    corr_tau: float = Field(0.05, gt=0)
    das_window: float = Field(0.0, ge=0)      # 0 = standard, 0.1 = relaxed
    emd_exact_cap: int = Field(1024, ge=1)


class DatasetConfig(_Section):
    count: int = Field(200, ge=1)
    n_points: int = Field(256, ge=1)
    holdout: int = Field(20, ge=0)


class PriorConfig(_Section):
    variance_retained: float = Field(0.95, gt=0, le=1)
    bandwidth: Optional[float] = Field(None, ge=0)   # None → Scott's rule
    aux_source: Literal["mu_mean", "z_mean"] = "mu_mean"


class TrainConfig(_Section):
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(12, ge=1)
    accumulation_steps: int = Field(4, ge=1)
    learning_rate: float = Field(1e-3, ge=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)

    @model_validator(mode="after")
    def batch_splits_evenly(self):
        if self.batch_size % self.accumulation_steps:
            raise ValueError(
                f"batch_size ({self.batch_size}) must be divisible by "
                f"accumulation_steps ({self.accumulation_steps})"
            )
        return self

    @property
    def micro_batch(self) -> int:
        return self.batch_size // self.accumulation_steps


class Config(_Section):
    """Full resolved configuration for every command."""

    seed: int = Field(0, ge=0, lt=2**64)
    threads: Optional[int] = Field(None, ge=1)

    deform: DeformConfig = Field(default_factory=DeformConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    edm: EdmConfig = Field(default_factory=EdmConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    metrics: MetricConfig = Field(default_factory=MetricConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    prior: PriorConfig = Field(default_factory=PriorConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def anchors_cover_keypoints(self):
        if self.loss.n_anchors < self.model.n_keypoints:
            raise ValueError(
                f"n_anchors ({self.loss.n_anchors}) must be >= n_keypoints ({self.model.n_keypoints})"
            )
        return self

    # ---------- loading --------------------------------------
    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "Config":
        """Load configuration from a YAML or JSON file."""
        cfg_path = Path(path)
        if not cfg_path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")

        with open(cfg_path, encoding="utf-8") as f:
            # YAML 1.1 reads exponent floats without a dot ("1e-08") as strings
            data = json.load(f) if cfg_path.suffix.lower() == ".json" else yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ValueError(f"Config root must be a mapping: {path}")
        return cls(**data)

    @classmethod
    def from_profile(cls, name: str = "desk") -> "Config":
        """Load a bundled profile (`desk` or `full`)."""
        path = PROFILE_DIR / f"{name}.yaml"
        if not path.exists():
            available = sorted(p.stem for p in PROFILE_DIR.glob("*.yaml"))
            raise ValueError(f"Unknown profile '{name}'; available: {', '.join(available)}")
        return cls.from_file(path)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        return cls(**json.loads(text))

    # ---------- serialization --------------------------------
    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def n_init_epochs(self) -> int:
        return int(round(self.loss.n_init_fraction * self.train.epochs))
