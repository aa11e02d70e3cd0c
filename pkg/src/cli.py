# src/cli.py
"""
kpdiff CLI - unsupervised 3D keypoints with a keypoint-conditioned point-cloud diffusion decoder
"""
from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click
import pandas as pd
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from src.config.schema import Config
from src.data.dataset import DatasetStore
from src.data.synthetic import make_synthetic_dataset
from src.deform.deformations import apply, sample_chain
from src.export.writers import (
    RunExporter,
    csv_text,
    dumps,
    keypoints_to_json,
    load_keypoints,
    schedule_frame,
    write_csv,
    write_json,
)
from src.geometry.annotations import load_annotations
from src.geometry.io import list_clouds, read_pointcloud, write_pointcloud
from src.geometry.pointcloud import make_rng, normalize
from src.geometry.sampling import fps as fps_select
from src.losses.terms import chamfer_oneway
from src.losses.total import diffusion_loss
from src.metrics.distances import chamfer_symmetric, emd, mmd_cd
from src.metrics.semantic import CorrelationInputs, DasInputs, correlation_matrix, das, keypoint_correlation
from src.model.encoder import encode
from src.model.gradcheck import run_suite
from src.model.latent import soft_project
from src.model.params import init_params
from src.pipeline.evaluate import consistency_mse, evaluate_keypoints, path_continuity
from src.pipeline.generate import fit_prior_from_model, generate, interpolate
from src.pipeline.train import split_dataset, train as train_model
from src.utils.errors import KeypointDiffusionError
from src.utils.parallel import resolve_threads

console = Console(stderr=True)


# ─────────────────────────────────────────────────────────────
# Shared plumbing
# ─────────────────────────────────────────────────────────────
def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def _config_hash() -> Optional[str]:
    ctx = click.get_current_context(silent=True)
    return ctx.meta.get("kpdiff.config_hash") if ctx is not None else None


def guarded(fn):
    """Runtime failures exit 1 with a one-line JSON diagnostic on stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (KeypointDiffusionError, OSError, ValueError) as e:
            payload = {"error": type(e).__name__, "message": str(e), "config_hash": _config_hash()}
            click.echo(json.dumps(payload, sort_keys=True), err=True)
            sys.exit(1)

    return wrapper


def load_config(path: Optional[str], seed: Optional[int] = None) -> Config:
    """--config file (YAML or JSON) or the desk profile, with --seed applied on top."""
    cfg = Config.from_file(path) if path else Config.from_profile("desk")
    if seed is not None:
        cfg.seed = seed
    ctx = click.get_current_context(silent=True)
    if ctx is not None:
        ctx.meta["kpdiff.config_hash"] = cfg.config_hash()
    return cfg


def emit(payload: dict, cfg: Config) -> None:
    click.echo(dumps(payload, cfg))


def echo_hash(cfg: Config) -> None:
    """Config hash on stderr, for commands whose stdout is not JSON."""
    click.echo(f"config_hash: {cfg.config_hash()}", err=True)


config_option = click.option("-c", "--config", "config_path", type=click.Path(dir_okay=False),
                             help="Config file (YAML or JSON); default: desk profile")
seed_option = click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Master seed (overrides config)")
threads_option = click.option("--threads", type=click.IntRange(min=1), help="Worker threads (or $KPDIFF_THREADS)")


# Create the main CLI group
@click.group()
@click.version_option(version="0.1.0", prog_name="kpdiff")
@click.option("--verbose", is_flag=True, help="Debug logging on stderr")
def cli(verbose):
    """
    kpdiff - unsupervised 3D keypoint discovery

    Learns ordered keypoints from point clouds by conditioning a diffusion
    decoder on them, and evaluates them with DAS, correlation and MMD.
    """
    _setup_logging(verbose)


# ─────────────────────────────────────────────────────────────
# Geometry commands
# ─────────────────────────────────────────────────────────────
@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--chain-json", type=click.Path(dir_okay=False), help="Dump the sampled chain for replay")
@seed_option
@config_option
@guarded
def deform(in_path, out_path, chain_json, seed, config_path):
    """Apply one random structured deformation chain to a cloud"""
    cfg = load_config(config_path, seed)
    pc = read_pointcloud(in_path)
    chain = sample_chain(make_rng(cfg.seed), cfg.deform)
    write_pointcloud(out_path, apply(chain, pc))
    record = chain.to_dict(pc)
    if chain_json:
        write_json(chain_json, record, cfg)
    emit({"out": str(out_path), "points": len(pc), "matrix": record["matrix"]}, cfg)


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", "k", required=True, type=int, help="Number of points to select")
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), help="Write the selected points")
@seed_option
@config_option
@guarded
def fps(in_path, k, out_path, seed, config_path):
    """Farthest point sampling"""
    cfg = load_config(config_path, seed)
    pc = read_pointcloud(in_path)
    selected, indices = fps_select(pc, k, cfg.seed)
    if out_path:
        write_pointcloud(out_path, pc.take(indices))
    emit({"indices": indices.tolist(), "points": selected.keypoints}, cfg)


# ─────────────────────────────────────────────────────────────
# Metrics
# ─────────────────────────────────────────────────────────────
@cli.group()
def metrics():
    """Distances and keypoint-quality metrics (JSON on stdout)"""


@metrics.command("cd")
@click.option("--a", "a_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--b", "b_path", required=True, type=click.Path(exists=True, dir_okay=False))
@config_option
@guarded
def metrics_cd(a_path, b_path, config_path):
    """Symmetric Chamfer distance"""
    cfg = load_config(config_path)
    emit({"cd": chamfer_symmetric(read_pointcloud(a_path), read_pointcloud(b_path))}, cfg)


@metrics.command("emd")
@click.option("--a", "a_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--b", "b_path", required=True, type=click.Path(exists=True, dir_okay=False))
@config_option
@guarded
def metrics_emd(a_path, b_path, config_path):
    """Exact earth mover's distance (equal sizes)"""
    cfg = load_config(config_path)
    value = emd(read_pointcloud(a_path), read_pointcloud(b_path), cfg.metrics.emd_exact_cap)
    emit({"emd": value}, cfg)


@metrics.command("das")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--annotations", "ann_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--window", type=click.FloatRange(min=0), help="Relaxed-DAS window (default: config)")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Per-pair rows")
@config_option
@guarded
def metrics_das(pred_path, ann_path, window, csv_path, config_path):
    """Dual alignment score over consecutive shapes (sorted ids)"""
    cfg = load_config(config_path)
    window = cfg.metrics.das_window if window is None else window
    predicted = load_keypoints(pred_path)
    annotations = load_annotations(ann_path)
    ids = sorted(set(predicted) & set(annotations))
    if len(ids) < 2:
        raise ValueError(f"DAS needs at least 2 shapes present in both files, found {len(ids)}")

    rows = []
    for ref, ev in zip(ids[:-1], ids[1:]):
        score = das(DasInputs(predicted[ref], annotations[ref], predicted[ev], annotations[ev], window))
        rows.append({"reference": ref, "evaluation": ev, "das": score})
    frame = pd.DataFrame(rows, columns=["reference", "evaluation", "das"])
    if csv_path:
        write_csv(csv_path, frame)
    emit({"das": float(frame["das"].mean()), "pairs": len(rows), "window": window}, cfg)


@metrics.command("corr")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--clouds", "clouds_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--tau", type=click.FloatRange(min=0, min_open=True), help="Distance threshold (default: config)")
@config_option
@guarded
def metrics_corr(pred_path, clouds_dir, tau, config_path):
    """Keypoint-part correlation against labeled clouds"""
    cfg = load_config(config_path)
    tau = cfg.metrics.corr_tau if tau is None else tau
    predicted = load_keypoints(pred_path)
    records = [r for r in DatasetStore.load(clouds_dir) if r.shape_id in predicted and r.labeled]
    inputs = CorrelationInputs([predicted[r.shape_id] for r in records], [r.cloud for r in records], tau)
    per_label = correlation_matrix(inputs).max(axis=0)
    emit({"correlation": keypoint_correlation(inputs), "per_label": per_label, "samples": len(records),
          "tau": tau}, cfg)


@metrics.command("mmd")
@click.option("--generated", "gen_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--reference", "ref_dir", required=True, type=click.Path(exists=True, file_okay=False))
@threads_option
@config_option
@guarded
def metrics_mmd(gen_dir, ref_dir, threads, config_path):
    """Minimum matching distance (Chamfer) from reference to generated shapes"""
    cfg = load_config(config_path)
    generated = [read_pointcloud(p) for p in list_clouds(gen_dir)]
    reference = [read_pointcloud(p) for p in list_clouds(ref_dir)]
    value = mmd_cd(generated, reference, resolve_threads(threads or cfg.threads))
    emit({"mmd_cd": value, "generated": len(generated), "reference": len(reference)}, cfg)


@metrics.command("loss")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--target", "target_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--sigma", type=click.FloatRange(min=0, min_open=True), help="Noise level (default: sigma_data)")
@config_option
@guarded
def metrics_loss(pred_path, target_path, sigma, config_path):
    """Breakdown of the reconstruction terms for a denoised prediction"""
    cfg = load_config(config_path)
    sigma = cfg.edm.sigma_data if sigma is None else sigma
    pred, target = read_pointcloud(pred_path), read_pointcloud(target_path)
    breakdown = diffusion_loss(pred, target, sigma, cfg.loss, cfg.edm)
    breakdown.update({
        "pred_to_target": chamfer_oneway(pred, target),
        "target_to_pred": chamfer_oneway(target, pred),
        "sigma": sigma,
    })
    emit(breakdown, cfg)


# ─────────────────────────────────────────────────────────────
# Schedules and checks
# ─────────────────────────────────────────────────────────────
@cli.command("schedule-dump")
@click.option("--epochs", type=click.IntRange(min=1), help="Epoch count (default: config)")
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), help="CSV path (default: stdout)")
@config_option
@guarded
def schedule_dump(epochs, out_path, config_path):
    """Curriculum (mu_n, sigma_n) per epoch and the sampler ladder as CSV"""
    cfg = load_config(config_path)
    frame = schedule_frame(cfg, epochs or cfg.train.epochs)
    echo_hash(cfg)
    if out_path:
        write_csv(out_path, frame)
        console.print(f"[green]✓[/green] Schedule saved to: [bold]{out_path}[/bold]")
    else:
        click.echo(csv_text(frame), nl=False)


@cli.command()
@click.option("--tol", default=1e-4, show_default=True, type=click.FloatRange(min=0, min_open=True))
@click.option("--seed", default=0, show_default=True, type=click.IntRange(0, 2**64 - 1))
@guarded
def gradcheck(tol, seed):
    """Finite-difference verification of every primitive and the full loss"""
    cfg = load_config(None, seed)
    report = run_suite(tol=tol, seed=seed)
    emit(report, cfg)
    if not report["passed"]:
        console.print(f"[red]✗ Gradient check failed:[/red] max rel. error {report['max_rel_error']:.3e}")
        sys.exit(1)


# ─────────────────────────────────────────────────────────────
# Data, training and generation
# ─────────────────────────────────────────────────────────────
@cli.command()
@click.option("--count", type=click.IntRange(min=1), help="Number of shapes (default: config)")
@click.option("--n-points", type=click.IntRange(min=1), help="Points per shape (default: config)")
@click.option("-o", "--out", "out_dir", required=True, type=click.Path(file_okay=False))
@seed_option
@threads_option
@config_option
@guarded
def synth(count, n_points, out_dir, seed, threads, config_path):
    """Write a labeled synthetic shape dataset"""
    cfg = load_config(config_path, seed)
    samples = make_synthetic_dataset(count or cfg.dataset.count, cfg.seed, n_points or cfg.dataset.n_points,
                                     resolve_threads(threads or cfg.threads))
    DatasetStore.write(out_dir, samples)
    console.print(f"[green]✓[/green] Generated {len(samples):,} shapes into [bold]{out_dir}[/bold]")
    emit({"out": str(out_dir), "count": len(samples)}, cfg)


@cli.command()
@click.option("-o", "--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False),
              help="Dataset directory (default: synthetic shapes from the config)")
@seed_option
@threads_option
@config_option
@guarded
def train(out_dir, data_dir, seed, threads, config_path):
    """Train encoder and decoder, fit the keypoint prior, write a run directory"""
    cfg = load_config(config_path, seed)
    threads = resolve_threads(threads or cfg.threads)

    if data_dir:
        records = [r.normalized() for r in DatasetStore.load(data_dir)]
    else:
        records = DatasetStore.from_samples(
            make_synthetic_dataset(cfg.dataset.count, cfg.seed, cfg.dataset.n_points, threads)
        )
        console.print(f"[green]✓[/green] Generated {len(records):,} synthetic shapes")
    train_set, held_out = split_dataset(records, cfg.dataset.holdout)
    clouds = [r.cloud for r in train_set]
    result = train_model(clouds, cfg, threads=threads)
    prior = fit_prior_from_model(result.params, clouds, cfg, threads)

    summary = {
        "n_train": len(train_set),
        "n_holdout": len(held_out),
        "steps": result.steps,
        "final": result.log[-1].to_dict(),
        "prior": prior.to_dict(),
    }
    if held_out:
        held_clouds = [r.cloud for r in held_out]
        summary["heldout_consistency_mse"] = consistency_mse(result.params, held_clouds, cfg, threads)
        summary["heldout_consistency_mse_init"] = consistency_mse(init_params(cfg.model, cfg.seed), held_clouds,
                                                                  cfg, threads)
    annotated = [r for r in held_out if r.annotations is not None]
    if len(annotated) >= 2:
        report = evaluate_keypoints(result.params, [r.cloud for r in annotated],
                                    [r.annotations for r in annotated], cfg, threads)
        summary["keypoints"] = report.to_dict()

    RunExporter.export_run(out_dir, result, prior, cfg, summary)
    console.print(f"[green]✓[/green] Run saved to: [bold]{out_dir}[/bold]")
    emit(summary, cfg)


@cli.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--count", type=click.IntRange(min=0), help="Shapes to generate (default: training-set size)")
@click.option("--n-points", type=click.IntRange(min=1), help="Points per shape (default: config)")
@click.option("-o", "--out", "out_dir", required=True, type=click.Path(file_okay=False))
@seed_option
@threads_option
@guarded
def sample(run_dir, count, n_points, out_dir, seed, threads):
    """Unconditional generation from the keypoint prior"""
    params, cfg, prior = RunExporter.load_run(run_dir)
    if seed is not None:
        cfg.seed = seed
    click.get_current_context().meta["kpdiff.config_hash"] = cfg.config_hash()
    n_points = n_points or cfg.dataset.n_points
    shapes = generate(prior, params, cfg, n_points, count, make_rng(cfg.seed, 11),
                      resolve_threads(threads or cfg.threads))
    RunExporter.write_sequence(out_dir, shapes, "sample")
    emit({"out": str(out_dir), "count": len(shapes), "n_points": n_points}, cfg)


@cli.command("interpolate")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--a", "a_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--b", "b_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--steps", default=5, show_default=True, type=click.IntRange(min=2))
@click.option("-o", "--out", "out_dir", required=True, type=click.Path(file_okay=False))
@seed_option
@threads_option
@guarded
def interpolate_cmd(run_dir, a_path, b_path, steps, out_dir, seed, threads):
    """Decode shapes along the straight line between two shapes' keypoints"""
    params, cfg, prior = RunExporter.load_run(run_dir)
    if seed is not None:
        cfg.seed = seed
    click.get_current_context().meta["kpdiff.config_hash"] = cfg.config_hash()

    ends = []
    for path in (a_path, b_path):
        pc, _, _ = normalize(read_pointcloud(path))
        k = encode(pc, params, cfg.model).keypoints
        ends.append((pc, soft_project(k, pc, cfg.model.soft_projection_tau)))
    (pc_a, k_a), (_, k_b) = ends

    path_k, shapes = interpolate(k_a, k_b, prior.aux_mean, steps, params, cfg, len(pc_a), cfg.seed,
                                 resolve_threads(threads or cfg.threads))
    RunExporter.write_sequence(out_dir, shapes, "interp", keypoints=path_k)
    continuity = path_continuity(shapes)
    emit({"out": str(out_dir), "steps": steps,
          "continuity": {key: continuity[key] for key in ("max", "median", "ratio")},
          "keypoints": keypoints_to_json({f"{i}": k for i, k in enumerate(path_k)})}, cfg)


@cli.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True, file_okay=False))
def info(run_dir):
    """Show a run's configuration and final losses"""
    try:
        params, cfg, prior = RunExporter.load_run(run_dir)
    except (KeypointDiffusionError, OSError, ValueError) as e:
        console.print(f"[red]Error loading run:[/red] {e}")
        sys.exit(1)

    table = Table(title=f"Run {Path(run_dir).name}", show_header=True)
    table.add_column("Item", style="cyan")
    table.add_column("Value", justify="right", style="green")
    table.add_row("config hash", cfg.config_hash()[:16])
    table.add_row("parameters", f"{params.n_parameters():,}")
    table.add_row("keypoints", str(cfg.model.n_keypoints))
    table.add_row("prior rank", str(prior.rank))
    table.add_row("prior bandwidth", f"{prior.bandwidth:.4g}")
    table.add_row("training shapes", str(prior.n_train))
    console.print(table)
    echo_hash(cfg)


# Entry point for direct execution
if __name__ == "__main__":
    cli()
