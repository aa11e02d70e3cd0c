# tests/test_acceptance.py
import math

import numpy as np
import pytest

from src.config.schema import Config
from src.data.dataset import DatasetStore
from src.data.synthetic import make_synthetic_dataset
from src.geometry.pointcloud import make_rng
from src.metrics.distances import mmd_cd
from src.metrics.semantic import DasInputs, das
from src.model.encoder import encode
from src.model.gradcheck import gradcheck_config
from src.model.latent import soft_project
from src.model.params import init_params
from src.pipeline.evaluate import consistency_mse, evaluate_keypoints, path_continuity
from src.pipeline.generate import fit_prior_from_model, generate, interpolate
from src.pipeline.train import split_dataset, train


def test_keypoints_are_convex_over_many_clouds():
    """Every keypoint reproduces as the attention-weighted sum of the input points"""
    model = gradcheck_config(0).model
    worst = 0.0
    for group in range(10):
        params = init_params(model, seed=group)
        for trial in range(100):
            rng = make_rng(300, group, trial)
            pts = rng.uniform(-1, 1, (int(rng.integers(model.n_keypoints, 48)), 3))
            out = encode(pts, params, model)
            assert np.all(out.attention >= 0)
            assert np.allclose(out.attention.sum(axis=1), 1.0, atol=1e-12)
            worst = max(worst, float(np.abs(out.attention @ pts - out.keypoints.keypoints).max()))
    assert worst <= 1e-9


def test_soft_projection_limits_over_many_cases():
    for trial in range(100):
        rng = make_rng(400, trial)
        surface = rng.uniform(-1, 1, (40, 3))
        k = rng.uniform(-1, 1, (5, 3))
        d2 = ((k[:, None, :] - surface[None, :, :]) ** 2).sum(-1)
        nearest = surface[np.argmin(d2, axis=1)]
        assert np.abs(soft_project(k, surface, 1e-6).keypoints - nearest).max() <= 1e-9
        assert np.abs(soft_project(k, surface, 1e6).keypoints - surface.mean(axis=0)).max() <= 1e-6


def test_metric_self_consistency():
    samples = make_synthetic_dataset(4, seed=0, n_points=64)
    for a, b in zip(samples[:-1], samples[1:]):
        inputs = DasInputs(a.annotations.points, a.annotations, b.annotations.points, b.annotations)
        assert das(inputs) == 1.0
    clouds = [s.cloud.points for s in samples]
    assert mmd_cd(clouds, clouds) == 0.0


@pytest.mark.slow
def test_toy_training_experiment():
    """
    200 synthetic shapes, 50 epochs, fixed seed: the loss falls, keypoints
    follow deformations, beat random keypoints on DAS and correlation, and
    interpolation paths move smoothly.
    """
    cfg = Config.from_profile("desk")
    threads = 4
    records = DatasetStore.from_samples(
        make_synthetic_dataset(cfg.dataset.count, cfg.seed, cfg.dataset.n_points, threads)
    )
    train_set, held_out = split_dataset(records, cfg.dataset.holdout)
    clouds = [r.cloud for r in train_set]

    result = train(clouds, cfg, threads=threads)
    frame = result.loss_frame()
    print(frame[["epoch", "total", "diff", "mse"]].to_string(index=False))
    assert len(frame) == cfg.train.epochs
    assert frame["total"].iloc[-1] <= 0.5 * frame["total"].iloc[0]

    held_clouds = [r.cloud for r in held_out]
    trained_mse = consistency_mse(result.params, held_clouds, cfg, threads)
    init_mse = consistency_mse(init_params(cfg.model, cfg.seed), held_clouds, cfg, threads)
    print(f"held-out consistency MSE: trained {trained_mse:.4g}, init {init_mse:.4g}")
    assert trained_mse <= init_mse / 3

    report = evaluate_keypoints(result.params, held_clouds, [r.annotations for r in held_out], cfg, threads)
    print(report.to_dict())
    assert report.das - report.das_random >= 0.15
    assert report.correlation - report.correlation_random >= 0.15

    prior = fit_prior_from_model(result.params, clouds, cfg, threads)
    ends = [soft_project(encode(pc, result.params, cfg.model).keypoints, pc, cfg.model.soft_projection_tau)
            for pc in clouds[:2]]
    _, path = interpolate(ends[0], ends[1], prior.aux_mean, 8, result.params, cfg,
                          cfg.dataset.n_points, seed=cfg.seed, threads=threads)
    continuity = path_continuity(path)
    print(f"interpolation adjacent CD: max {continuity['max']:.4g}, median {continuity['median']:.4g}")
    assert continuity["max"] <= 3 * continuity["median"]

    generated = generate(prior, result.params, cfg, cfg.dataset.n_points, count=20, threads=threads)
    assert math.isfinite(mmd_cd(generated, clouds[:20], threads=threads))
