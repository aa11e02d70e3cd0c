# src/deform/deformations.py
"""
Structured linear deformations: stretch, bend, twist, taper, rotate.

Every deformation is a 3×3 matrix acting on column vectors (p' = M p);
clouds stored as (N, 3) rows are mapped with ``points @ M.T``. A chain is
applied in canonical order, stretch first, so its composed matrix is the
right-to-left product M_rot · M_taper · M_twist · M_bend · M_stretch.
The twist angle depends on the mean x-coordinate of the cloud it acts on,
so its matrix is only known once the chain meets a cloud.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config.schema import DEFORM_ORDER, DeformConfig, DeformKind
from src.geometry.pointcloud import KeypointSet, PointCloud

# ordered (input axis i, output axis o) pairs for the bend shear
BEND_AXES: List[Tuple[int, int]] = [(i, o) for i, o in itertools.permutations(range(3), 2)]


# ─────────────────────────────────────────────────────────────
# Matrices
# ─────────────────────────────────────────────────────────────
def stretch_matrix(v: np.ndarray, lam: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.eye(3) + (lam - 1.0) * np.outer(v, v)


def bend_matrix(i: int, o: int, alpha: float) -> np.ndarray:
    if i == o:
        raise ValueError("bend needs distinct input/output axes")
    m = np.eye(3)
    m[o, i] += alpha
    return m


def twist_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def taper_matrix(tau: float) -> np.ndarray:
    m = np.eye(3)
    m[0, 1] += tau
    m[2, 1] += tau
    return m


def rotate_matrix(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# ─────────────────────────────────────────────────────────────
# Specs and chains
# ─────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class DeformationSpec:
    kind: DeformKind
    params: Dict[str, object]
    matrix: Optional[np.ndarray] = None   # None only for twist (needs x̄)

    def to_dict(self, matrix: Optional[np.ndarray] = None) -> dict:
        m = self.matrix if matrix is None else matrix
        return {
            "kind": self.kind.value,
            "params": {
                k: (list(map(float, v)) if isinstance(v, (list, tuple, np.ndarray)) else v)
                for k, v in self.params.items()
            },
            "matrix": None if m is None else np.asarray(m).tolist(),
        }


def make_spec(kind: DeformKind, **params) -> DeformationSpec:
    """Build a spec from explicit parameters (used for sampling and replay)."""
    kind = DeformKind(kind)
    if kind is DeformKind.STRETCH:
        v = np.asarray(params["v"], dtype=np.float64)
        v = v / np.linalg.norm(v)
        lam = float(params["lam"])
        return DeformationSpec(kind, {"v": tuple(v), "lam": lam}, stretch_matrix(v, lam))
    if kind is DeformKind.BEND:
        i, o, alpha = int(params["i"]), int(params["o"]), float(params["alpha"])
        return DeformationSpec(kind, {"i": i, "o": o, "alpha": alpha}, bend_matrix(i, o, alpha))
    if kind is DeformKind.TWIST:
        return DeformationSpec(kind, {"gamma": float(params["gamma"])}, None)
    if kind is DeformKind.TAPER:
        tau = float(params["tau"])
        return DeformationSpec(kind, {"tau": tau}, taper_matrix(tau))
    phi = float(params["phi"])
    return DeformationSpec(kind, {"phi": phi}, rotate_matrix(phi))


def matrix_of(spec: DeformationSpec, pc: Optional[PointCloud] = None) -> np.ndarray:
    """
    3×3 matrix of one deformation. The twist needs the cloud it acts on
    (θ = γ · mean x); the other kinds ignore `pc`.
    """
    if spec.kind is DeformKind.TWIST:
        if pc is None:
            raise ValueError("twist matrix needs the point cloud it is applied to")
        x_bar = float(pc.points[:, 0].mean())
        return twist_matrix(spec.params["gamma"] * x_bar)
    return spec.matrix


@dataclass(frozen=True)
class DeformationChain:
    specs: List[DeformationSpec] = field(default_factory=list)
    twist_reference: str = "intermediate"

    def matrices(self, pc: PointCloud) -> List[np.ndarray]:
        """Component matrices, twist resolved against `pc` as the chain runs."""
        mats: List[np.ndarray] = []
        running = np.eye(3)
        for spec in self.specs:
            if spec.kind is DeformKind.TWIST:
                if self.twist_reference == "original":
                    ref = pc
                else:
                    ref = pc.with_points(pc.points @ running.T)
                m = matrix_of(spec, ref)
            else:
                m = spec.matrix
            mats.append(m)
            running = m @ running
        return mats

    def compose(self, pc: PointCloud) -> np.ndarray:
        """Composed matrix M for this chain acting on `pc`."""
        m = np.eye(3)
        for mat in self.matrices(pc):
            m = mat @ m
        return m

    def to_dict(self, pc: Optional[PointCloud] = None) -> dict:
        mats = self.matrices(pc) if pc is not None else [s.matrix for s in self.specs]
        out = {
            "twist_reference": self.twist_reference,
            "specs": [s.to_dict(m) for s, m in zip(self.specs, mats)],
        }
        if pc is not None:
            out["matrix"] = self.compose(pc).tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DeformationChain":
        specs = [make_spec(DeformKind(s["kind"]), **s["params"]) for s in data["specs"]]
        return cls(specs, data.get("twist_reference", "intermediate"))


# ─────────────────────────────────────────────────────────────
# Sampling and application
# ─────────────────────────────────────────────────────────────
def sample_chain(rng: np.random.Generator, cfg: Optional[DeformConfig] = None) -> DeformationChain:
    """One spec per enabled kind, parameters uniform in the configured ranges."""
    cfg = cfg or DeformConfig()
    enabled = set(cfg.kinds)
    specs: List[DeformationSpec] = []

    for kind in DEFORM_ORDER:
        if kind not in enabled:
            continue
        if kind is DeformKind.STRETCH:
            v = rng.standard_normal(3)
            while np.linalg.norm(v) < 1e-12:
                v = rng.standard_normal(3)
            specs.append(make_spec(kind, v=v, lam=rng.uniform(1.0, cfg.stretch_max)))
        elif kind is DeformKind.BEND:
            i, o = BEND_AXES[int(rng.integers(len(BEND_AXES)))]
            specs.append(make_spec(kind, i=i, o=o, alpha=rng.uniform(-cfg.bend_max, cfg.bend_max)))
        elif kind is DeformKind.TWIST:
            specs.append(make_spec(kind, gamma=rng.uniform(0.0, cfg.twist_max)))
        elif kind is DeformKind.TAPER:
            specs.append(make_spec(kind, tau=rng.uniform(0.0, cfg.taper_max)))
        else:
            specs.append(make_spec(kind, phi=rng.uniform(-cfg.rotate_max, cfg.rotate_max)))

    return DeformationChain(specs, cfg.twist_reference)


def identity_chain(twist_reference: str = "intermediate") -> DeformationChain:
    """All five kinds at their range minima; composes to I."""
    return DeformationChain(
        [
            make_spec(DeformKind.STRETCH, v=(1.0, 0.0, 0.0), lam=1.0),
            make_spec(DeformKind.BEND, i=0, o=1, alpha=0.0),
            make_spec(DeformKind.TWIST, gamma=0.0),
            make_spec(DeformKind.TAPER, tau=0.0),
            make_spec(DeformKind.ROTATE, phi=0.0),
        ],
        twist_reference,
    )


def apply(chain: DeformationChain, pc: PointCloud) -> PointCloud:
    """S_d = T(S_0): every point mapped by the composed matrix."""
    m = chain.compose(pc)
    return pc.with_points(pc.points @ m.T)


def apply_to_keypoints(chain: DeformationChain, keypoints: KeypointSet, pc_context: PointCloud) -> KeypointSet:
    """Map keypoints with the same matrix the chain applies to `pc_context`."""
    m = chain.compose(pc_context)
    return KeypointSet(keypoints.keypoints @ m.T)
