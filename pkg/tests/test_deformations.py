# tests/test_deformations.py
import math

import numpy as np
import pytest

from src.config.schema import DeformConfig, DeformKind
from src.deform.deformations import (
    BEND_AXES,
    DeformationChain,
    apply,
    apply_to_keypoints,
    bend_matrix,
    identity_chain,
    make_spec,
    matrix_of,
    rotate_matrix,
    sample_chain,
    stretch_matrix,
    taper_matrix,
    twist_matrix,
)
from src.geometry.pointcloud import KeypointSet, PointCloud, make_rng


@pytest.fixture
def cloud():
    return PointCloud(make_rng(1).uniform(-1, 1, (64, 3)))


# ---------------------------------------------------------------------
# Component matrices
# ---------------------------------------------------------------------


def test_taper_hand_case():
    p = taper_matrix(0.5) @ np.array([1.0, 2.0, 3.0])
    assert p.tolist() == [2.0, 2.0, 4.0]


def test_stretch_scales_along_axis_only():
    v = np.array([0.0, 0.0, 1.0])
    m = stretch_matrix(v, 2.0)
    assert np.allclose(m @ v, 2.0 * v)
    assert np.allclose(m @ np.array([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
    assert np.linalg.det(m) == pytest.approx(2.0)


def test_make_spec_normalizes_stretch_direction():
    spec = make_spec(DeformKind.STRETCH, v=(0.0, 3.0, 0.0), lam=1.5)
    assert np.allclose(spec.params["v"], (0.0, 1.0, 0.0))
    assert np.allclose(spec.matrix @ [0, 1, 0], [0, 1.5, 0])


def test_bend_shears_output_axis():
    m = bend_matrix(0, 1, 0.3)
    assert np.allclose(m @ np.array([2.0, 0.0, 0.0]), [2.0, 0.6, 0.0])
    assert np.linalg.det(m) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        bend_matrix(1, 1, 0.3)


def test_bend_axes_are_the_six_ordered_pairs():
    assert len(BEND_AXES) == 6
    assert all(i != o for i, o in BEND_AXES)


def test_twist_rotates_about_x():
    m = twist_matrix(math.pi / 2)
    assert np.allclose(m @ np.array([5.0, 0.0, 1.0]), [5.0, -1.0, 0.0])


def test_rotate_about_y_is_orthonormal():
    m = rotate_matrix(0.4)
    assert np.allclose(m @ m.T, np.eye(3))
    assert np.allclose(m @ np.array([1.0, 0.0, 0.0]), [math.cos(0.4), 0.0, -math.sin(0.4)])
    assert np.allclose(m @ np.array([0.0, 1.0, 0.0]), [0.0, 1.0, 0.0])


def test_twist_angle_follows_mean_x():
    pc = PointCloud([[1.0, 0, 0], [3.0, 0, 0]])        # mean x = 2
    spec = make_spec(DeformKind.TWIST, gamma=math.pi / 4)
    assert np.allclose(matrix_of(spec, pc), twist_matrix(math.pi / 2))
    with pytest.raises(ValueError):
        matrix_of(spec)


# ---------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------


@pytest.mark.parametrize("reference", ["intermediate", "original"])
def test_identity_chain_composes_to_identity(cloud, reference):
    chain = identity_chain(reference)
    assert np.allclose(chain.compose(cloud), np.eye(3))
    assert np.allclose(apply(chain, cloud).points, cloud.points)


def test_compose_is_right_to_left_product(cloud):
    chain = sample_chain(make_rng(2))
    mats = chain.matrices(cloud)
    expected = mats[4] @ mats[3] @ mats[2] @ mats[1] @ mats[0]
    assert np.allclose(chain.compose(cloud), expected)


def test_apply_is_linear_map(cloud):
    chain = sample_chain(make_rng(3))
    m = chain.compose(cloud)
    assert np.allclose(apply(chain, cloud).points, cloud.points @ m.T)


def test_keypoints_follow_cloud_matrix(cloud):
    chain = sample_chain(make_rng(4))
    k = KeypointSet(cloud.points[:5])
    moved = apply_to_keypoints(chain, k, cloud)
    assert np.allclose(moved.keypoints, apply(chain, cloud).points[:5])


def test_twist_reference_changes_angle():
    pc = PointCloud([[0.0, 0, 0], [2.0, 0, 0]])        # mean x = 1
    specs = [make_spec(DeformKind.STRETCH, v=(1, 0, 0), lam=2.0), make_spec(DeformKind.TWIST, gamma=0.5)]
    inter = DeformationChain(specs, "intermediate").matrices(pc)[1]
    orig = DeformationChain(specs, "original").matrices(pc)[1]
    assert np.allclose(inter, twist_matrix(1.0))       # mean x after stretch = 2
    assert np.allclose(orig, twist_matrix(0.5))


def test_chain_dict_roundtrip(cloud):
    chain = sample_chain(make_rng(5))
    data = chain.to_dict(cloud)
    assert np.allclose(data["matrix"], chain.compose(cloud))
    back = DeformationChain.from_dict(data)
    assert np.allclose(back.compose(cloud), chain.compose(cloud))
    assert [s["kind"] for s in data["specs"]] == ["stretch", "bend", "twist", "taper", "rotate"]


# ---------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------


def test_sample_chain_deterministic(cloud):
    a = sample_chain(make_rng(9, 1)).compose(cloud)
    b = sample_chain(make_rng(9, 1)).compose(cloud)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("trial", range(25))
def test_sampled_parameters_in_range(trial):
    cfg = DeformConfig()
    chain = sample_chain(make_rng(50, trial), cfg)
    p = {s.kind: s.params for s in chain.specs}
    assert 1.0 <= p[DeformKind.STRETCH]["lam"] <= cfg.stretch_max
    assert np.linalg.norm(p[DeformKind.STRETCH]["v"]) == pytest.approx(1.0)
    assert abs(p[DeformKind.BEND]["alpha"]) <= cfg.bend_max
    assert (p[DeformKind.BEND]["i"], p[DeformKind.BEND]["o"]) in BEND_AXES
    assert 0.0 <= p[DeformKind.TWIST]["gamma"] <= cfg.twist_max
    assert 0.0 <= p[DeformKind.TAPER]["tau"] <= cfg.taper_max
    assert abs(p[DeformKind.ROTATE]["phi"]) <= cfg.rotate_max


def test_kind_subset_keeps_canonical_order():
    cfg = DeformConfig(kinds=["rotate", "stretch"])
    chain = sample_chain(make_rng(0), cfg)
    assert [s.kind for s in chain.specs] == [DeformKind.STRETCH, DeformKind.ROTATE]


def test_zero_ranges_give_identity(cloud):
    cfg = DeformConfig(stretch_max=1.0, bend_max=0.0, twist_max=0.0, taper_max=0.0, rotate_max=0.0)
    chain = sample_chain(make_rng(8), cfg)
    assert np.allclose(chain.compose(cloud), np.eye(3))
