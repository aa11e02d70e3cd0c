# src/data/dataset.py
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.data.synthetic import SyntheticSample
from src.geometry.annotations import AnnotationSet, load_annotations, save_annotations
from src.geometry.io import list_clouds, read_pointcloud, write_pointcloud
from src.geometry.pointcloud import LabeledPointCloud, PointCloud, normalize

logger = logging.getLogger(__name__)

ANNOTATIONS_FILE = "annotations.json"
SHAPES_FILE = "shapes.csv"


@dataclass(frozen=True)
class ShapeRecord:
    shape_id: str
    cloud: PointCloud
    annotations: Optional[AnnotationSet] = None

    @property
    def labeled(self) -> bool:
        return isinstance(self.cloud, LabeledPointCloud)

    def normalized(self) -> "ShapeRecord":
        """Unit-sphere cloud; annotations follow the same similarity transform."""
        cloud, center, scale = normalize(self.cloud)
        ann = None
        if self.annotations is not None:
            ann = self.annotations.transformed(np.eye(3) / scale, -center / scale)
        return ShapeRecord(self.shape_id, cloud, ann)


class DatasetStore:
    """Directory of point clouds plus an optional annotations.json."""

    # ── public api ──────────────────────────────────────────────
    @staticmethod
    def write(out_dir: Union[str, Path], samples: Sequence[SyntheticSample], fmt: str = "xyz") -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for s in samples:
            write_pointcloud(out_dir / f"{s.shape_id}.{fmt}", s.cloud)
        save_annotations(out_dir / ANNOTATIONS_FILE, {s.shape_id: s.annotations for s in samples})

        rows = [{"shape_id": s.shape_id, **s.params.to_dict(), "scale": s.scale} for s in samples]
        pd.DataFrame(rows).to_csv(out_dir / SHAPES_FILE, index=False, float_format="%.12g")
        logger.info("wrote %d shapes to %s", len(samples), out_dir)
        return out_dir

    @staticmethod
    def load(directory: Union[str, Path]) -> List[ShapeRecord]:
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"Dataset directory not found: {directory}")
        ann_path = directory / ANNOTATIONS_FILE
        annotations: Dict[str, AnnotationSet] = load_annotations(ann_path) if ann_path.exists() else {}

        records = [
            ShapeRecord(path.stem, read_pointcloud(path), annotations.get(path.stem))
            for path in list_clouds(directory)
        ]
        if not records:
            raise ValueError(f"No .xyz/.ply files in {directory}")
        return records

    @staticmethod
    def from_samples(samples: Sequence[SyntheticSample]) -> List[ShapeRecord]:
        return [ShapeRecord(s.shape_id, s.cloud, s.annotations) for s in samples]
