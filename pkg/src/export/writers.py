# src/export/writers.py
# Machine-readable output: fixed-precision JSON, CSV tables and run directories
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.config.schema import Config
from src.edm.schedule import curriculum_params, sigma_ladder
from src.geometry.io import write_pointcloud
from src.geometry.pointcloud import KeypointSet, PointCloud
from src.model.checkpoint import load_checkpoint, save_checkpoint
from src.model.params import ParamStore
from src.pipeline.prior import KeypointPrior
from src.pipeline.train import TrainResult

logger = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 12
FLOAT_FORMAT = "%.12g"


# ─────────────────────────────────────────────────────────────
# JSON
# ─────────────────────────────────────────────────────────────
def fixed_floats(obj: Any, digits: int = SIGNIFICANT_DIGITS) -> Any:
    """Round every float in a nested structure to `digits` significant digits; non-finite → None."""
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.{digits}g}")
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return fixed_floats(obj.tolist(), digits)
    if isinstance(obj, dict):
        return {str(k): fixed_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [fixed_floats(v, digits) for v in obj]
    return obj


def dumps(obj: Any, cfg: Optional[Config] = None, indent: Optional[int] = 2) -> str:
    """Canonical JSON text (sorted keys, fixed floats); `cfg` adds its config_hash."""
    if cfg is not None and isinstance(obj, dict):
        obj = {**obj, "config_hash": cfg.config_hash()}
    return json.dumps(fixed_floats(obj), sort_keys=True, indent=indent)


def write_json(path: Union[str, Path], obj: Any, cfg: Optional[Config] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj, cfg) + "\n", encoding="utf-8")
    return path


# ─────────────────────────────────────────────────────────────
# CSV
# ─────────────────────────────────────────────────────────────
def csv_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(frame), encoding="utf-8")
    return path


def schedule_frame(cfg: Config, epochs: int) -> pd.DataFrame:
    """Per-epoch curriculum (μ_n, σ_n) followed by the sampler ladder, in long form."""
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    rows: List[Dict[str, Any]] = []
    for e in range(epochs + 1):
        mu, std = curriculum_params(e, epochs, cfg.edm)
        rows.append({"table": "curriculum", "index": e, "mu_n": mu, "sigma_n": std, "sigma": np.nan})
    for i, sigma in enumerate(sigma_ladder(cfg.edm)):
        rows.append({"table": "ladder", "index": i, "mu_n": np.nan, "sigma_n": np.nan, "sigma": sigma})
    return pd.DataFrame(rows, columns=["table", "index", "mu_n", "sigma_n", "sigma"])


# ─────────────────────────────────────────────────────────────
# Keypoint files: {shape_id: [[x, y, z], ...]}
# ─────────────────────────────────────────────────────────────
def keypoints_to_json(keypoints: Dict[str, KeypointSet]) -> Dict[str, list]:
    return {shape_id: k.keypoints.tolist() for shape_id, k in keypoints.items()}


def load_keypoints(path: Union[str, Path]) -> Dict[str, KeypointSet]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Keypoint file not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"Keypoint file must map shape ids to keypoint lists: {path}")
    return {str(k): KeypointSet(np.asarray(v, dtype=np.float64)) for k, v in data.items()}


# ─────────────────────────────────────────────────────────────
# Run directories
# ─────────────────────────────────────────────────────────────
class RunExporter:
    """Layout of a training run directory and of generated shape sequences."""

    LOSSES = "losses.csv"
    CONFIG = "config.json"
    SUMMARY = "summary.json"
    KEYPOINTS = "keypoints.json"

    @staticmethod
    def export_run(
        run_dir: Union[str, Path],
        result: TrainResult,
        prior: KeypointPrior,
        cfg: Config,
        summary: Optional[Dict[str, Any]] = None,
    ) -> Path:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(run_dir, result.params, cfg, {"steps": result.steps})
        write_csv(run_dir / RunExporter.LOSSES, result.loss_frame())
        (run_dir / RunExporter.CONFIG).write_text(
            json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        prior.save(run_dir)
        write_json(run_dir / RunExporter.SUMMARY, summary or {}, cfg)
        logger.info("run written to %s", run_dir)
        return run_dir

    @staticmethod
    def load_run(run_dir: Union[str, Path]) -> Tuple[ParamStore, Config, KeypointPrior]:
        run_dir = Path(run_dir)
        if not run_dir.is_dir():
            raise FileNotFoundError(f"Run directory not found: {run_dir}")
        params, _ = load_checkpoint(run_dir)
        cfg = Config.from_file(run_dir / RunExporter.CONFIG)
        return params, cfg, KeypointPrior.load(run_dir)

    @staticmethod
    def write_sequence(
        out_dir: Union[str, Path],
        clouds: Sequence[PointCloud],
        prefix: str = "shape",
        keypoints: Optional[Sequence[KeypointSet]] = None,
    ) -> List[Path]:
        """PLY files <prefix>_000.ply, ... plus keypoints.json when keypoints are given."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        width = max(3, len(str(max(len(clouds) - 1, 0))))
        paths = [write_pointcloud(out_dir / f"{prefix}_{i:0{width}d}.ply", pc) for i, pc in enumerate(clouds)]
        if keypoints is not None:
            named = {f"{prefix}_{i:0{width}d}": k for i, k in enumerate(keypoints)}
            write_json(out_dir / RunExporter.KEYPOINTS, keypoints_to_json(named))
        return paths
