# tests/test_model.py
import math

import numpy as np
import pytest

from src.config.schema import EdmConfig
from src.edm.schedule import precondition
from src.geometry.pointcloud import KeypointSet, PointCloud, make_rng, normalize
from src.losses.terms import keypoint_chamfer, kl_divergence
from src.model.checkpoint import FORMAT_VERSION, MANIFEST_FILE, load_checkpoint, save_checkpoint
from src.model.denoiser import denoiser_forward, make_denoiser
from src.model.encoder import encode, keypoints_from_attention
from src.model.gradcheck import (
    attention_case,
    grad_check,
    gradcheck_config,
    primitive_cases,
    relative_error,
    run_suite,
)
from src.model.latent import assemble_latent, reparameterize, soft_project, split_latent
from src.model.layers import fourier_encode
from src.model.objective import draw_sample, is_finite, sample_objective
from src.model.params import init_params
from src.model.tape import PRIMITIVES, Tape
from src.utils.errors import GradMismatch, ShapeMismatch, TooFewPoints


@pytest.fixture(scope="module")
def cfg():
    return gradcheck_config(0)


@pytest.fixture(scope="module")
def params(cfg):
    return init_params(cfg.model, cfg.seed)


@pytest.fixture(scope="module")
def cloud():
    pc, _, _ = normalize(PointCloud(make_rng(3).uniform(-1, 1, (32, 3))))
    return pc


# ---------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------


def test_tape_quadratic_gradient():
    tape = Tape()
    w = tape.leaf(np.array([1.0, -2.0, 3.0]), name="w")
    grads = tape.backward(tape.sum(w * w))
    assert np.array_equal(tape.grad(grads, w), [2.0, -4.0, 6.0])


def test_grad_check_quadratic_is_exact():
    report = grad_check(lambda t, v: t.sum(v["w"] * v["w"]), {"w": np.array([0.3, -1.2, 2.5])}, tol=1e-8)
    assert report.passed and report.n_checked == 3


def test_stop_gradient_blocks_path():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    grads = tape.backward(tape.sum(x * tape.stop_gradient(x)))
    assert np.array_equal(tape.grad(grads, x), [1.0, 2.0])


def test_grad_check_reports_mismatch():
    # the tape sees x·sg(x), the finite difference sees x²
    with pytest.raises(GradMismatch) as exc:
        grad_check(lambda t, v: t.sum(v["x"] * t.stop_gradient(v["x"])), {"x": np.array([1.0, 2.0])}, tol=1e-6)
    assert exc.value.worst[0]["param"] == "x"


def test_backward_needs_scalar():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ValueError):
        tape.backward(x * 2.0)


def test_vars_stay_on_their_tape():
    x = Tape().leaf(np.ones(2))
    with pytest.raises(ValueError):
        Tape().add(x, 1.0)


def test_relative_error_floor():
    assert relative_error(1e-9, 2e-9) == pytest.approx(1e-9 / 1e-3)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_every_primitive_has_a_case():
    assert set(primitive_cases(0)) == set(PRIMITIVES)
    plumbing = {"leaf", "constant", "lift", "stop_gradient", "backward", "grad"}
    public = {name for name in vars(Tape) if not name.startswith("_") and callable(getattr(Tape, name))}
    assert public - plumbing == set(PRIMITIVES)


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients(name):
    fn, values = primitive_cases(0)[name]
    assert grad_check(fn, values, tol=1e-6).passed


def test_attention_path_gradient():
    fn, values = attention_case(0)
    assert grad_check(fn, values, tol=1e-4).max_rel_error < 1e-4


def test_run_suite_passes():
    out = run_suite(tol=1e-4, seed=0, max_per_tensor=3)
    assert out["passed"], out["model"]["worst"]
    assert out["max_rel_error"] < 1e-4
    assert set(out["primitives"]) == set(primitive_cases(0))


# ---------------------------------------------------------------------
# Features and encoder
# ---------------------------------------------------------------------


def test_fourier_encode_values():
    freqs = make_rng(1).standard_normal((3, 4))
    out = fourier_encode(np.zeros(3), freqs)
    assert out.tolist() == [0.0] * 4 + [1.0] * 4
    one = fourier_encode(np.array([0.25, 0.7, -0.1]), np.array([[1.0], [0.0], [0.0]]))
    assert one == pytest.approx([1.0, 0.0], abs=1e-12)
    many = fourier_encode(make_rng(2).uniform(-5, 5, (50, 3)), freqs)
    assert many.shape == (50, 8) and np.all(np.abs(many) <= 1.0)


def test_attention_rows_are_simplex(cfg, params, cloud):
    out = encode(cloud, params, cfg.model)
    a = out.attention
    assert a.shape == (cfg.model.n_keypoints, len(cloud))
    assert np.all(a >= 0)
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("trial", range(5))
def test_keypoints_are_convex_combinations(cfg, params, trial):
    pts = make_rng(40, trial).uniform(-1, 1, (24, 3))
    out = encode(pts, params, cfg.model)
    assert np.allclose(out.keypoints.keypoints, out.attention @ pts, atol=1e-9)
    assert np.all(out.keypoints.keypoints >= pts.min(axis=0) - 1e-12)
    assert np.all(out.keypoints.keypoints <= pts.max(axis=0) + 1e-12)


def test_keypoints_from_attention_endpoints():
    pts = make_rng(4).uniform(size=(6, 3))
    tape = Tape()
    one_hot = np.zeros((2, 6))
    one_hot[0, 4] = 1.0
    one_hot[1] = 1.0 / 6
    k = keypoints_from_attention(tape, tape.constant(one_hot), tape.constant(pts)).value
    assert np.array_equal(k[0], pts[4])
    assert np.allclose(k[1], pts.mean(axis=0))


def test_encoder_output_shapes_and_determinism(cfg, params, cloud):
    a = encode(cloud, params, cfg.model)
    b = encode(cloud, params, cfg.model)
    assert a.mu.shape == (cfg.model.aux_dim,) and a.logvar.shape == (cfg.model.aux_dim,)
    assert np.array_equal(a.keypoints.keypoints, b.keypoints.keypoints)
    assert set(a.to_dict()) == {"keypoints", "mu", "logvar"}


def test_encoder_needs_enough_points(cfg, params):
    with pytest.raises(TooFewPoints):
        encode(np.zeros((cfg.model.n_keypoints - 1, 3)), params, cfg.model)


# ---------------------------------------------------------------------
# Latent
# ---------------------------------------------------------------------


def test_reparameterize_clamps_tiny_variance():
    mu = np.array([0.5, -1.0])
    z = reparameterize(mu, np.array([-1e9, -1e9]), make_rng(0))
    assert np.allclose(z, mu, atol=1e-5)


def test_reparameterize_statistics_and_determinism():
    mu, logvar = np.array([0.3, -0.7]), np.array([0.2, -0.5])
    rng = make_rng(1)
    draws = np.array([reparameterize(mu, logvar, rng) for _ in range(20_000)])
    se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - mu) < 3 * se)
    assert np.array_equal(reparameterize(mu, logvar, make_rng(9)), reparameterize(mu, logvar, make_rng(9)))
    with pytest.raises(ShapeMismatch):
        reparameterize(mu, np.zeros(3), rng)


def test_soft_project_two_point_closed_form():
    s = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    out = soft_project(np.array([[0.25, 0, 0]]), s, 0.25)
    expected = math.exp(-3) / (math.exp(-1) + math.exp(-3))
    assert out.keypoints[0, 0] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.1192, abs=1e-4)


def test_soft_project_limits():
    rng = make_rng(5)
    s = rng.uniform(-1, 1, (20, 3))
    k = rng.uniform(-1, 1, (4, 3))
    sharp = soft_project(k, s, 1e-6).keypoints
    nearest = s[np.argmin(((k[:, None, :] - s[None, :, :]) ** 2).sum(-1), axis=1)]
    assert np.allclose(sharp, nearest, atol=1e-9)
    flat = soft_project(k, s, 1e6).keypoints
    assert np.allclose(flat, s.mean(axis=0), atol=1e-5)


def test_soft_project_stays_in_bounding_box():
    rng = make_rng(6)
    s = rng.uniform(0, 1, (30, 3))
    out = soft_project(rng.uniform(-3, 3, (10, 3)), s, 0.1).keypoints
    assert np.all(out >= s.min(axis=0) - 1e-12) and np.all(out <= s.max(axis=0) + 1e-12)
    with pytest.raises(ValueError):
        soft_project(s[:2], s, 0.0)


def test_assemble_and_split_latent(cfg):
    z0 = assemble_latent(KeypointSet([[1.0, 2.0, 3.0]]), np.array([9.0]))
    assert z0.tolist() == [1.0, 2.0, 3.0, 9.0]

    k = make_rng(7).standard_normal((10, 3))
    aux = make_rng(8).standard_normal(5)
    z0 = assemble_latent(k, aux)
    assert len(z0) == 35
    back_k, back_aux = split_latent(z0, 10)
    assert np.array_equal(back_k.keypoints, k) and np.array_equal(back_aux, aux)
    with pytest.raises(ShapeMismatch):
        assemble_latent(k, aux.reshape(1, 5))


# ---------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------


@pytest.fixture
def z0(cfg):
    return make_rng(10).standard_normal(cfg.model.latent_dim) * 0.5


def test_zero_head_reduces_to_skip(cfg, params, cloud, z0):
    zeroed = params.copy()
    zeroed["den.out.w"] = np.zeros_like(zeroed["den.out.w"])
    zeroed["den.out.b"] = np.zeros_like(zeroed["den.out.b"])
    out = denoiser_forward(cloud.points, 0.5, z0, zeroed, cfg.model, cfg.edm)
    assert np.array_equal(out, cloud.points * precondition(0.5, cfg.edm.sigma_data).c_skip)


def test_denoiser_is_permutation_equivariant(cfg, params, cloud, z0):
    perm = make_rng(11).permutation(len(cloud))
    out = denoiser_forward(cloud.points, 0.8, z0, params, cfg.model, cfg.edm)
    permuted = denoiser_forward(cloud.points[perm], 0.8, z0, params, cfg.model, cfg.edm)
    assert np.allclose(permuted, out[perm], atol=1e-10)


def test_denoiser_depends_on_latent(cfg, params, cloud, z0):
    a = denoiser_forward(cloud.points, 0.8, z0, params, cfg.model, cfg.edm)
    b = denoiser_forward(cloud.points, 0.8, z0 + 1e-3, params, cfg.model, cfg.edm)
    assert np.max(np.abs(a - b)) > 1e-9


def test_denoiser_shape_checks(cfg, params, cloud, z0):
    with pytest.raises(ShapeMismatch):
        denoiser_forward(cloud.points, 0.8, z0[:-1], params, cfg.model, cfg.edm)
    with pytest.raises(ShapeMismatch):
        denoiser_forward(cloud.points[:, :2], 0.8, z0, params, cfg.model, cfg.edm)


def test_make_denoiser_closure(cfg, params, cloud, z0):
    fn = make_denoiser(params, cfg.model, EdmConfig())
    assert np.array_equal(fn(cloud.points, 0.8, z0), denoiser_forward(cloud.points, 0.8, z0, params, cfg.model, EdmConfig()))


# ---------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------


def _objective(cfg, params, cloud, lam):
    draw = draw_sample(cloud, make_rng(12), cfg, progress=0.0)
    tape = Tape()
    bound = params.bind(tape)
    loss = sample_objective(tape, bound, draw, lam, cfg)
    return tape, bound, draw, loss


def test_diffusion_loss_does_not_reach_encoder(cfg, params, cloud):
    lam = {"fps": 0.0, "diff": 1.0, "chamfer": 0.0, "mse": 0.0, "kl": 0.0}
    tape, bound, _, loss = _objective(cfg, params, cloud, lam)
    grads = params.gradients(tape, bound, tape.backward(loss.total))
    for name, g in grads.items():
        if name.startswith("enc."):
            assert not np.any(g), name
    assert any(np.any(g) for name, g in grads.items() if name.startswith("den."))


def test_objective_terms_match_array_losses(cfg, params, cloud):
    lam = {"fps": 1.0, "diff": 3.0, "chamfer": 1.0, "mse": 1.0, "kl": 1.0}
    _, _, draw, loss = _objective(cfg, params, cloud, lam)
    enc = encode(draw.source, params, cfg.model)
    values = loss.values()
    assert values["chamfer"] == pytest.approx(keypoint_chamfer(enc.keypoints, draw.source), rel=1e-12)
    assert values["kl"] == pytest.approx(kl_divergence(enc.mu, enc.logvar), rel=1e-12)
    assert float(loss.total.value) == pytest.approx(sum(lam[k] * v for k, v in values.items()), rel=1e-12)
    assert is_finite(loss)
    assert loss.z0.shape == (cfg.model.latent_dim,)


def test_draw_sample_is_seeded(cfg, cloud):
    a = draw_sample(cloud, make_rng(13), cfg, progress=0.5)
    b = draw_sample(cloud, make_rng(13), cfg, progress=0.5)
    assert a.sigma == b.sigma
    assert np.array_equal(a.deformed, b.deformed) and np.array_equal(a.noise, b.noise)
    assert len(a.anchors) == cfg.loss.n_anchors
    assert cfg.edm.sigma_min <= a.sigma <= cfg.edm.sigma_max


# ---------------------------------------------------------------------
# Parameters and checkpoints
# ---------------------------------------------------------------------


def test_init_params_seeded(cfg):
    a, b = init_params(cfg.model, 1), init_params(cfg.model, 1)
    c = init_params(cfg.model, 2)
    assert all(np.array_equal(a[n], b[n]) for n in a)
    assert not np.array_equal(a["enc.queries"], c["enc.queries"])
    assert "enc.fourier" not in a.trainable_names()
    assert a.is_finite()
    assert a["enc.queries"].shape == (cfg.model.n_keypoints, cfg.model.embed_dim)


def test_param_copy_is_independent(params):
    clone = params.copy()
    clone["den.out.b"] = clone["den.out.b"] + 1.0
    assert not np.array_equal(clone["den.out.b"], params["den.out.b"])
    assert clone.frozen == params.frozen


def test_checkpoint_roundtrip(tmp_path, cfg, params):
    save_checkpoint(tmp_path, params, cfg, {"steps": 7})
    loaded, manifest = load_checkpoint(tmp_path)
    assert manifest["format_version"] == FORMAT_VERSION
    assert manifest["config_hash"] == cfg.config_hash()
    assert manifest["dims"]["latent_dim"] == cfg.model.latent_dim
    assert manifest["steps"] == 7
    assert loaded.frozen == params.frozen
    assert all(np.array_equal(loaded[n], params[n]) for n in params)


def test_checkpoint_version_checked(tmp_path, cfg, params):
    save_checkpoint(tmp_path, params, cfg)
    path = tmp_path / MANIFEST_FILE
    path.write_text(path.read_text().replace(f'"format_version": {FORMAT_VERSION}', '"format_version": 99'))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path)


def test_checkpoint_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path)
