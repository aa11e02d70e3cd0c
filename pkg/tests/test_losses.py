# tests/test_losses.py
import math

import numpy as np
import pytest

from src.config.schema import EdmConfig, LossWeights
from src.geometry.pointcloud import KeypointSet, PointCloud, make_rng
from src.losses.terms import (
    chamfer_asym,
    chamfer_oneway,
    deformation_consistency,
    fps_anchor_loss,
    gamma_weight,
    keypoint_chamfer,
    kl_divergence,
    kl_warmup,
    repulsion,
)
from src.losses.total import TERM_ORDER, diffusion_loss, phase_weights, total_loss
from src.utils.errors import BadWeights, EmptyCloud, SizeMismatch, TooFewPoints

M = 0.05


def _brute_chamfer(a, b):
    mins = []
    for p in a:
        best = math.inf
        for q in b:
            dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
            best = min(best, dx * dx + dy * dy + dz * dz)
        mins.append(best)
    return math.fsum(mins) / len(mins)


# ---------------------------------------------------------------------
# Chamfer family
# ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "a,b,expected",
    [
        ([[0, 0, 0]], [[1, 0, 0], [0, 2, 0]], 1.0),
        ([[0, 0, 0], [3, 0, 0]], [[1, 0, 0]], 2.5),
        ([[1, 2, 3], [4, 5, 6]], [[1, 2, 3], [4, 5, 6]], 0.0),
    ],
)
def test_chamfer_oneway_hand_cases(a, b, expected):
    assert chamfer_oneway(np.array(a, float), np.array(b, float)) == expected


def test_chamfer_oneway_is_zero_for_subset():
    b = make_rng(0).uniform(size=(10, 3))
    assert chamfer_oneway(b[:4], b) == 0.0
    assert chamfer_oneway(b, b[:4]) > 0.0


@pytest.mark.parametrize("trial", range(30))
def test_chamfer_matches_double_loop_exactly(trial):
    rng = make_rng(21, trial)
    a = rng.uniform(-1, 1, (int(rng.integers(1, 17)), 3))
    b = rng.uniform(-1, 1, (int(rng.integers(1, 17)), 3))
    assert chamfer_oneway(a, b) == _brute_chamfer(a, b)


def test_chamfer_empty():
    with pytest.raises(EmptyCloud):
        chamfer_oneway(np.zeros((0, 3)), np.zeros((1, 3)))


def test_chamfer_asym_hand_case_and_asymmetry():
    pred, target = np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])
    assert chamfer_asym(pred, target, 1.0, 2.0) == 3.0
    a = np.array([[0.0, 0, 0], [3.0, 0, 0]])
    b = np.array([[1.0, 0, 0]])
    assert chamfer_asym(a, b, 0.5, 1.0) != chamfer_asym(b, a, 0.5, 1.0)
    assert chamfer_asym(a, a, 0.5, 1.0) == 0.0


@pytest.mark.parametrize("alpha,beta", [(1.0, 1.0), (2.0, 1.0), (0.0, 1.0)])
def test_chamfer_asym_bad_weights(alpha, beta):
    with pytest.raises(BadWeights):
        chamfer_asym(np.zeros((1, 3)), np.zeros((1, 3)), alpha, beta)


# ---------------------------------------------------------------------
# Repulsion
# ---------------------------------------------------------------------


def test_repulsion_hinge_inactive_and_maximal():
    assert repulsion(np.array([[0, 0, 0], [2 * M, 0, 0]], float), 1, M) == 0.0
    assert repulsion(np.zeros((2, 3)), 1, M) == pytest.approx(M)


def test_repulsion_three_collinear_points():
    pts = np.array([[0, 0, 0], [M / 2, 0, 0], [2 * M, 0, 0]], float)
    # nn table: 0→1 (m/2), 1→0 (m/2), 2→1 (1.5m, inactive)
    assert repulsion(pts, 1, M) == pytest.approx((M / 2 + M / 2 + 0.0) / 3, abs=1e-15)


def test_repulsion_isometry_invariant():
    rng = make_rng(5)
    pts = rng.uniform(0, 0.1, (40, 3))
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    moved = pts @ q.T + np.array([3.0, -1.0, 2.0])
    assert repulsion(moved, 4, M) == pytest.approx(repulsion(pts, 4, M), abs=1e-9)


def test_repulsion_errors():
    with pytest.raises(TooFewPoints):
        repulsion(np.zeros((4, 3)), 4, M)
    with pytest.raises(ValueError):
        repulsion(np.zeros((5, 3)), 1, 0.0)


@pytest.mark.parametrize("sigma,expected", [(0.0, 1.0), (0.3, 0.5), (0.9, 0.25)])
def test_gamma_weight(sigma, expected):
    assert gamma_weight(sigma, 0.3) == pytest.approx(expected)


# ---------------------------------------------------------------------
# Keypoint terms
# ---------------------------------------------------------------------


def test_keypoint_chamfer():
    surface = PointCloud([[0, 0, 0], [1, 0, 0]])
    assert keypoint_chamfer(KeypointSet([[1, 0, 0]]), surface) == 0.0
    assert keypoint_chamfer(KeypointSet([[0, 2, 0]]), surface) == 4.0
    # more surface never increases the loss
    richer = PointCloud([[0, 0, 0], [1, 0, 0], [0, 1.5, 0]])
    assert keypoint_chamfer(KeypointSet([[0, 2, 0]]), richer) <= 4.0


def test_fps_anchor_loss_directions():
    anchors = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    k = np.array([[0.5, 0, 0]])
    assert fps_anchor_loss(k, anchors, "keypoints_to_anchors") == pytest.approx(0.25)
    assert fps_anchor_loss(k, anchors, "anchors_to_keypoints") == pytest.approx(1.25)
    assert fps_anchor_loss(k, anchors) == pytest.approx(0.75)
    assert fps_anchor_loss(anchors, anchors) == 0.0
    assert fps_anchor_loss(anchors[:1], anchors, "keypoints_to_anchors") == 0.0


def test_deformation_consistency():
    a = np.array([[0.0, 0, 0], [1.0, 1, 1]])
    assert deformation_consistency(a, a) == 0.0
    assert deformation_consistency(a, a[::-1]) > 0.0
    shifted = a + np.array([[1.0, 0, 0], [0.0, 2, 0]])
    assert deformation_consistency(a, shifted) == 2.5
    with pytest.raises(SizeMismatch):
        deformation_consistency(a, a[:1])


# ---------------------------------------------------------------------
# Latent terms
# ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "mu,logvar,expected",
    [
        ([0.0], [0.0], 0.0),
        ([1.0], [0.0], 0.5),
        ([0.0], [1.0], 0.5 * (math.e - 2.0)),
    ],
)
def test_kl_divergence_values(mu, logvar, expected):
    assert kl_divergence(np.array(mu), np.array(logvar)) == pytest.approx(expected, abs=1e-12)


def test_kl_matches_monte_carlo():
    rng = make_rng(6)
    mu = rng.normal(0, 1, 3)
    logvar = rng.normal(0, 0.5, 3)
    std = np.exp(0.5 * logvar)
    z = mu + std * rng.standard_normal((100_000, 3))
    log_q = -0.5 * (((z - mu) / std) ** 2 + logvar + math.log(2 * math.pi)).sum(axis=1)
    log_p = -0.5 * (z ** 2 + math.log(2 * math.pi)).sum(axis=1)
    diff = log_q - log_p
    se = diff.std(ddof=1) / math.sqrt(len(diff))
    assert abs(diff.mean() - kl_divergence(mu, logvar)) < 3 * se


def test_kl_size_mismatch():
    with pytest.raises(SizeMismatch):
        kl_divergence(np.zeros(2), np.zeros(3))


@pytest.mark.parametrize("step,expected", [(0, 0.0), (500, 0.5), (3000, 1.0)])
def test_kl_warmup(step, expected):
    assert kl_warmup(step, 1000) == expected


# ---------------------------------------------------------------------
# Totals
# ---------------------------------------------------------------------


@pytest.fixture
def weights():
    return LossWeights()


def test_total_all_zero(weights):
    assert total_loss({}, weights, step=10, epoch=3).total == 0.0


def test_total_init_phase_diff_only(weights):
    out = total_loss({"diff": 1.0}, weights, step=5, epoch=0, n_init_epochs=5)
    assert out.total == 3.0
    assert out.weights["fps"] == 1.0 and out.weights["chamfer"] == 1.0 and out.weights["mse"] == 1.0


def test_fps_weight_drops_after_init(weights):
    lam = phase_weights(weights, step=10, epoch=5, n_init_epochs=5)
    assert lam["fps"] == 0.0 and lam["diff"] == 3.0


def test_kl_contributes_nothing_at_step_zero(weights):
    out = total_loss({"kl": 123.0}, weights, step=0, epoch=10)
    assert out.total == 0.0 and out.kl == 123.0


def test_total_equals_reported_weighted_sum(weights):
    terms = {"fps": 0.2, "diff": 0.7, "chamfer": 0.1, "mse": 0.05, "kl": 2.0}
    out = total_loss(terms, weights, step=250, epoch=1, n_init_epochs=2)
    expected = 0.0
    for name in TERM_ORDER:
        expected += out.weights[name] * terms[name]
    assert out.total == expected
    assert out.terms() == terms
    assert set(out.to_dict()) == set(TERM_ORDER) | {"total", "weights"}


def test_diffusion_loss_parts(weights):
    pred = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [1.0, 1.0, 1.0]])
    out = diffusion_loss(pred, pred, 0.3, weights, EdmConfig())
    assert out["chamfer_asym"] == 0.0 and out["repulsion"] == 0.0
    assert out["gamma_sigma"] == pytest.approx(0.5)
    assert out["w_sigma"] == pytest.approx(0.18 ** -2)
    assert out["diff"] == 0.0

    shifted = pred + np.array([0.1, 0, 0])
    out = diffusion_loss(shifted, pred, 0.3, weights)
    assert out["diff"] == pytest.approx(out["w_sigma"] * out["chamfer_asym"] + weights.rho * out["gamma_sigma"] * out["repulsion"])
