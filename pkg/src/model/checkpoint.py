# src/model/checkpoint.py
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from src.config.schema import Config
from src.model.params import ParamStore
from src.utils.errors import ShapeMismatch

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
PARAMS_FILE = "params.npz"
MANIFEST_FILE = "manifest.json"


def save_checkpoint(
    run_dir: Union[str, Path],
    params: ParamStore,
    cfg: Config,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write params.npz (named tensors) and manifest.json into `run_dir`."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    np.savez(run_dir / PARAMS_FILE, **params.tensors)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "dims": {
            "n_keypoints": cfg.model.n_keypoints,
            "aux_dim": cfg.model.aux_dim,
            "latent_dim": cfg.model.latent_dim,
        },
        "frozen": sorted(params.frozen),
        "tensors": {name: list(shape) for name, shape in params.shapes().items()},
        "n_parameters": params.n_parameters(),
    }
    if extra:
        manifest.update(extra)
    path = run_dir / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("checkpoint written to %s (%d parameters)", run_dir, manifest["n_parameters"])
    return path


def load_checkpoint(run_dir: Union[str, Path]) -> Tuple[ParamStore, Dict[str, Any]]:
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST_FILE
    if not manifest_path.exists():
        raise FileNotFoundError(f"No checkpoint manifest in {run_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"Unsupported checkpoint format {manifest.get('format_version')!r}")

    with np.load(run_dir / PARAMS_FILE) as data:
        tensors = {name: data[name] for name in manifest["tensors"]}
    for name, shape in manifest["tensors"].items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise ShapeMismatch(tuple(shape), tensors[name].shape, name)
    return ParamStore(tensors, frozen=manifest.get("frozen", [])), manifest
