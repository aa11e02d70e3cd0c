# src/geometry/io.py
"""
Minimal ASCII point-cloud formats.

xyz-text : one point per line, 3 or 4 (x y z [label]) whitespace-separated
           fields; '#' comment lines and blank lines are ignored.
ply-ascii: `element vertex N` with float or double properties x y z and
           an optional integer `label`; other vertex properties are skipped.
Writers emit 9 significant digits.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np

from src.geometry.pointcloud import LabeledPointCloud, PointCloud
from src.utils.errors import EmptyCloud, MalformedLine

logger = logging.getLogger(__name__)

Format = Literal["xyz-text", "ply-ascii"]
SUFFIX_FORMATS = {".xyz": "xyz-text", ".txt": "xyz-text", ".ply": "ply-ascii"}

_FLOAT_FMT = "{:.9g}"


def _decode(data: Union[bytes, str]) -> str:
    if not isinstance(data, (bytes, bytearray)):
        return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        start = data.rfind(b"\n", 0, e.start) + 1
        end = data.find(b"\n", e.start)
        line = data[start:end if end >= 0 else len(data)].decode("utf-8", errors="replace")
        raise MalformedLine(data.count(b"\n", 0, e.start) + 1, line, "not UTF-8 text") from None


def _label(token: str, row: int, line: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise MalformedLine(row, line, "label is not a number") from None
    if value < 0 or value != int(value):
        raise MalformedLine(row, line, "label must be a non-negative integer")
    return int(value)


def _build(rows: List[List[float]], labels: Optional[List[int]]) -> PointCloud:
    if not rows:
        raise EmptyCloud()
    if labels is None:
        return PointCloud(np.array(rows))
    return LabeledPointCloud(np.array(rows), labels=np.array(labels, dtype=np.int64))


# ── xyz ─────────────────────────────────────────────────────
def _parse_xyz(text: str) -> PointCloud:
    rows: List[List[float]] = []
    labels: List[int] = []
    width: Optional[int] = None

    for row, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) not in (3, 4):
            raise MalformedLine(row, line, f"expected 3 or 4 fields, got {len(fields)}")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise MalformedLine(row, line, f"expected {width} fields like the first row")
        try:
            coords = [float(f) for f in fields[:3]]
        except ValueError:
            raise MalformedLine(row, line, "coordinate is not a number") from None
        if not all(np.isfinite(coords)):
            raise MalformedLine(row, line, "non-finite coordinate")
        rows.append(coords)
        if width == 4:
            labels.append(_label(fields[3], row, line))

    return _build(rows, labels if width == 4 else None)


def _format_xyz(pc: PointCloud) -> str:
    labels = pc.labels if isinstance(pc, LabeledPointCloud) else None
    lines = []
    for i, p in enumerate(pc.points):
        parts = [_FLOAT_FMT.format(c) for c in p]
        if labels is not None:
            parts.append(str(int(labels[i])))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


# ── ply ─────────────────────────────────────────────────────
def _parse_ply(text: str) -> PointCloud:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MalformedLine(1, lines[0] if lines else "", "missing 'ply' magic")

    n_vertices: Optional[int] = None
    props: List[str] = []
    in_vertex = False
    body_start = None

    for row, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise MalformedLine(row, line, "only 'format ascii' is supported")
        elif tokens[0] == "element":
            in_vertex = len(tokens) == 3 and tokens[1] == "vertex"
            if in_vertex:
                try:
                    n_vertices = int(tokens[2])
                except ValueError:
                    raise MalformedLine(row, line, "vertex count is not an integer") from None
        elif tokens[0] == "property":
            if in_vertex:
                props.append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = row
            break
        else:
            raise MalformedLine(row, line, "unknown header keyword")

    if body_start is None:
        raise MalformedLine(len(lines), lines[-1], "missing end_header")
    if n_vertices is None:
        raise MalformedLine(body_start, "end_header", "no vertex element")
    missing = {"x", "y", "z"} - set(props)
    if missing:
        raise MalformedLine(body_start, "end_header", f"missing properties {sorted(missing)}")

    col = {name: props.index(name) for name in ("x", "y", "z")}
    label_col = props.index("label") if "label" in props else None

    rows: List[List[float]] = []
    labels: List[int] = []
    # vertex rows follow the header directly (blank lines tolerated)
    row = body_start
    for line in lines[body_start:]:
        row += 1
        if len(rows) == n_vertices:
            break
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < len(props):
            raise MalformedLine(row, line, f"expected {len(props)} vertex fields")
        try:
            rows.append([float(tokens[col[a]]) for a in ("x", "y", "z")])
        except ValueError:
            raise MalformedLine(row, line, "coordinate is not a number") from None
        if not all(np.isfinite(rows[-1])):
            raise MalformedLine(row, line, "non-finite coordinate")
        if label_col is not None:
            labels.append(_label(tokens[label_col], row, line))

    if len(rows) != n_vertices:
        raise MalformedLine(row, "", f"expected {n_vertices} vertices, found {len(rows)}")
    return _build(rows, labels if label_col is not None else None)


def _format_ply(pc: PointCloud) -> str:
    labeled = isinstance(pc, LabeledPointCloud)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pc)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if labeled:
        header.append("property int label")
    header.append("end_header")
    return "\n".join(header) + "\n" + _format_xyz(pc)


# ── public api ──────────────────────────────────────────────
def parse_pointcloud(data: Union[bytes, str], fmt: Format = "xyz-text") -> PointCloud:
    """Parse xyz-text or ply-ascii content. A label column yields a LabeledPointCloud."""
    text = _decode(data)
    if fmt == "xyz-text":
        return _parse_xyz(text)
    if fmt == "ply-ascii":
        return _parse_ply(text)
    raise ValueError(f"Unknown point-cloud format: {fmt}")


def serialize_pointcloud(pc: PointCloud, fmt: Format = "xyz-text") -> str:
    if fmt == "xyz-text":
        return _format_xyz(pc)
    if fmt == "ply-ascii":
        return _format_ply(pc)
    raise ValueError(f"Unknown point-cloud format: {fmt}")


def format_for(path: Union[str, Path]) -> Format:
    suffix = Path(path).suffix.lower()
    if suffix not in SUFFIX_FORMATS:
        raise ValueError(f"Cannot infer point-cloud format from '{suffix}' (use .xyz or .ply)")
    return SUFFIX_FORMATS[suffix]


def read_pointcloud(path: Union[str, Path]) -> PointCloud:
    path = Path(path)
    pc = parse_pointcloud(path.read_bytes(), format_for(path))
    logger.debug("read %d points from %s", len(pc), path)
    return pc


def write_pointcloud(path: Union[str, Path], pc: PointCloud) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_pointcloud(pc, format_for(path)), encoding="utf-8")
    return path


def list_clouds(directory: Union[str, Path]) -> List[Path]:
    """Point-cloud files of a directory in sorted name order."""
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in SUFFIX_FORMATS)
