# tests/test_config.py
"""
Sanity checks for the bundled profiles and the Config schema.
Run:  pytest -q tests/test_config.py
"""

import pathlib

import pytest
import yaml
from pydantic import ValidationError

from src.config.schema import Config, DeformKind, EdmConfig, LossWeights, ModelConfig, TrainConfig

# ---------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------

PROFILE_DIR = pathlib.Path("src/config")
PROFILES = ["desk", "full"]
REQUIRED_SECTIONS = {"seed", "deform", "loss", "edm", "model", "metrics", "dataset", "prior", "train"}

# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------


def _load_yaml(name):
    with (PROFILE_DIR / f"{name}.yaml").open("r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)


# ---------------------------------------------------------------------
# Tests
# ---------------------------------------------------------------------


def test_desk_yaml_has_every_section():
    """The desk profile spells out every section instead of leaning on defaults."""
    name = "desk"
    data = _load_yaml(name)
    assert isinstance(data, dict) and data, "YAML empty or not a mapping"
    missing = REQUIRED_SECTIONS - set(data)
    assert not missing, f"{name} missing {sorted(missing)}"


@pytest.mark.parametrize("name", PROFILES)
def test_profile_validates(name):
    cfg = Config.from_profile(name)
    assert cfg.loss.beta > cfg.loss.alpha
    assert cfg.edm.sigma_min < cfg.edm.sigma_max
    assert cfg.train.batch_size % cfg.train.accumulation_steps == 0


def test_defaults_match_reference_values():
    """Defaults are the reference hyper-parameters."""
    w = LossWeights()
    assert (w.lambda_fps, w.lambda_diff, w.lambda_chamfer, w.lambda_mse, w.lambda_kl) == (0, 3, 1, 1, 1)
    assert (w.init_lambda_fps, w.init_lambda_diff) == (1, 3)
    assert (w.alpha, w.beta, w.rho, w.margin, w.k_nn) == (0.5, 1.0, 0.1, 0.05, 4)
    assert (w.warmup_steps, w.n_init_fraction, w.n_anchors) == (1000, 0.1, 20)

    e = EdmConfig()
    assert (e.sigma_min, e.sigma_max, e.sigma_data) == (0.002, 80.0, 0.3)
    assert (e.mu_init, e.sigma_init, e.mu_final, e.sigma_final) == (-2.0, 0.6, -1.2, 1.2)
    assert e.curriculum_fraction == 0.8


def test_latent_dim():
    assert ModelConfig(n_keypoints=10, aux_dim=5).latent_dim == 35


def test_desk_matches_defaults():
    """The desk profile restates the defaults; keeping them in sync keeps hashes stable."""
    assert Config.from_profile("desk").config_hash() == Config().config_hash()


@pytest.mark.parametrize(
    "section,values",
    [
        ("loss", {"alpha": 1.0, "beta": 1.0}),                 # beta must exceed alpha
        ("edm", {"sigma_min": 5.0, "sigma_max": 1.0}),
        ("train", {"batch_size": 10, "accumulation_steps": 4}),
        ("model", {"noise_embed_dim": 15}),
        ("deform", {"kinds": ["stretch", "stretch"]}),
    ],
)
def test_invalid_sections_rejected(section, values):
    with pytest.raises(ValidationError):
        Config(**{section: values})


def test_anchors_must_cover_keypoints():
    with pytest.raises(ValidationError):
        Config(model={"n_keypoints": 30}, loss={"n_anchors": 20})


def test_unknown_key_rejected():
    with pytest.raises(ValidationError):
        Config(model={"n_keypoint": 10})


def test_unknown_profile():
    with pytest.raises(ValueError, match="available"):
        Config.from_profile("laptop")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        Config.from_file(tmp_path / "nope.yaml")


def test_from_file_partial_override(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("seed: 7\nmodel:\n  n_keypoints: 4\n", encoding="utf-8")
    cfg = Config.from_file(path)
    assert cfg.seed == 7 and cfg.model.n_keypoints == 4
    assert cfg.edm == EdmConfig()


def test_json_roundtrip_and_hash():
    cfg = Config(seed=3)
    back = Config.from_json(cfg.to_json())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert len(cfg.config_hash()) == 64
    assert Config(seed=4).config_hash() != cfg.config_hash()


def test_to_json_is_sorted_and_compact():
    text = Config().to_json()
    assert ", " not in text and ": " not in text
    assert text.index('"dataset"') < text.index('"deform"') < text.index('"edm"')


def test_n_init_epochs_rounds():
    cfg = Config(train={"epochs": 50})
    assert cfg.n_init_epochs() == 5
    cfg = Config(train={"epochs": 4}, loss={"n_init_fraction": 0.1})
    assert cfg.n_init_epochs() == 0


def test_deform_kinds_are_enum():
    cfg = Config(deform={"kinds": ["twist", "bend"]})
    assert cfg.deform.kinds == [DeformKind.TWIST, DeformKind.BEND]


def test_micro_batch():
    assert TrainConfig(batch_size=12, accumulation_steps=4).micro_batch == 3
