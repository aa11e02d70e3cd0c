# src/utils/errors.py
"""
Exception hierarchy shared by every package.

All errors derive from ValueError so callers that only care about
"bad input" can keep catching the builtin.
"""
from __future__ import annotations

from typing import Any, Dict, List, Optional


class KeypointDiffusionError(ValueError):
    """Base class for all domain errors."""


# ── geometry / io ─────────────────────────────────────────────
class MalformedLine(KeypointDiffusionError):
    def __init__(self, row: int, line: str, reason: str = "bad field count"):
        self.row = row
        self.line = line
        super().__init__(f"Malformed line at row {row}: {reason}: {line!r}")


class EmptyCloud(KeypointDiffusionError):
    def __init__(self, what: str = "point cloud"):
        super().__init__(f"Empty {what}")


class DegenerateCloud(KeypointDiffusionError):
    def __init__(self):
        super().__init__("All points coincide; cannot normalize (scale = 0)")


class KTooLarge(KeypointDiffusionError):
    def __init__(self, k: int, n: int):
        super().__init__(f"Requested k={k} samples from a cloud of {n} points")


class NTooLarge(KeypointDiffusionError):
    def __init__(self, n: int, total: int):
        super().__init__(f"Requested n={n} points from a cloud of {total} points")


# ── losses / metrics ─────────────────────────────────────────
class BadWeights(KeypointDiffusionError):
    def __init__(self, alpha: float, beta: float):
        super().__init__(f"Asymmetric Chamfer needs beta > alpha > 0 (alpha={alpha}, beta={beta})")


class TooFewPoints(KeypointDiffusionError):
    def __init__(self, n: int, needed: int):
        super().__init__(f"Need more than {needed} points, got {n}")


class SizeMismatch(KeypointDiffusionError):
    def __init__(self, a: int, b: int, what: str = "point sets"):
        super().__init__(f"Size mismatch between {what}: {a} != {b}")


class TooLargeForExact(KeypointDiffusionError):
    def __init__(self, n: int, cap: int):
        super().__init__(f"Exact EMD limited to {cap} points, got {n}; downsample first")


class NoLabels(KeypointDiffusionError):
    def __init__(self):
        super().__init__("Keypoint correlation needs at least one labeled sample")


class NoAnnotations(KeypointDiffusionError):
    def __init__(self, shape: str = ""):
        super().__init__(f"No keypoint annotations{' for ' + shape if shape else ''}")


class EmptySet(KeypointDiffusionError):
    def __init__(self, which: str):
        super().__init__(f"Empty {which} set")


# ── edm / model ──────────────────────────────────────────────
class NonPositiveSigma(KeypointDiffusionError):
    def __init__(self, sigma: float):
        super().__init__(f"Noise level must be > 0, got {sigma}")


class ShapeMismatch(KeypointDiffusionError):
    def __init__(self, expected: Any, got: Any, what: str = "array"):
        super().__init__(f"Shape mismatch for {what}: expected {expected}, got {got}")


class GradMismatch(KeypointDiffusionError):
    def __init__(self, worst: List[Dict[str, Any]], tol: float):
        self.worst = worst
        head = worst[0] if worst else {}
        super().__init__(
            f"Gradient check failed (tol={tol:g}); worst: {head.get('param')}"
            f"{head.get('index')} rel_err={head.get('rel_err', float('nan')):.3e}"
        )


# ── pipeline ─────────────────────────────────────────────────
class TooFewSamples(KeypointDiffusionError):
    def __init__(self, n: int, needed: int = 2):
        super().__init__(f"Need at least {needed} keypoint sets, got {n}")


class NonFiniteLoss(KeypointDiffusionError):
    def __init__(self, step: int, diagnostics: Optional[Dict[str, Any]] = None):
        self.step = step
        self.diagnostics = diagnostics or {}
        super().__init__(f"Non-finite loss at step {step}: {self.diagnostics}")
