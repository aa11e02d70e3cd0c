# src/geometry/annotations.py
"""
Human-style keypoint annotations: positions with semantic ids.

On disk a dataset's annotations are one JSON object
``{shape_id: [{"xyz": [x, y, z], "label": int}, ...]}``; list order is
the annotation id used to break distance ties.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import numpy as np

from src.utils.errors import NoAnnotations, ShapeMismatch


@dataclass(frozen=True)
class AnnotationSet:
    points: np.ndarray      # (A, 3)
    labels: np.ndarray      # (A,) semantic ids

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if len(pts) != len(labels):
            raise ShapeMismatch((len(pts),), labels.shape, "annotation labels")
        pts.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def require(self, shape: str = "") -> "AnnotationSet":
        if len(self) == 0:
            raise NoAnnotations(shape)
        return self

    def transformed(self, matrix: np.ndarray, offset: np.ndarray = None) -> "AnnotationSet":
        pts = self.points @ np.asarray(matrix, dtype=np.float64).T
        if offset is not None:
            pts = pts + offset
        return AnnotationSet(pts, self.labels)

    def to_records(self) -> List[dict]:
        return [{"xyz": p.tolist(), "label": int(l)} for p, l in zip(self.points, self.labels)]

    @classmethod
    def from_records(cls, records: Sequence[Mapping]) -> "AnnotationSet":
        if not records:
            return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
        return cls([r["xyz"] for r in records], [int(r["label"]) for r in records])


def load_annotations(path: Union[str, Path]) -> Dict[str, AnnotationSet]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"Annotations root must be an object: {path}")
    return {shape_id: AnnotationSet.from_records(records) for shape_id, records in data.items()}


def save_annotations(path: Union[str, Path], annotations: Mapping[str, AnnotationSet]) -> Path:
    path = Path(path)
    payload = {shape_id: ann.to_records() for shape_id, ann in annotations.items()}
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    return path
