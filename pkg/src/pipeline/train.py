# src/pipeline/train.py
"""
Training loop.

Every random draw of sample s in batch b of epoch e comes from the
stream make_rng(seed, 2, e, b, s), so a run is a pure function of
(seed, config) and does not depend on the worker count: per-sample
gradients are computed independently and summed in sample order.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config.schema import Config
from src.geometry.pointcloud import PointCloud, make_rng
from src.losses.total import TERM_ORDER, LossBreakdown, phase_weights, total_loss
from src.model.objective import SampleDraw, draw_sample, is_finite, sample_objective
from src.model.params import ParamStore, init_params
from src.model.tape import Tape
from src.pipeline.optim import Adam
from src.utils.errors import NonFiniteLoss
from src.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

EpochCallback = Callable[[int, LossBreakdown], None]


@dataclass
class SampleResult:
    grads: Dict[str, np.ndarray]
    terms: Dict[str, float]
    total: float


@dataclass
class TrainResult:
    params: ParamStore
    log: List[LossBreakdown] = field(default_factory=list)
    steps: int = 0

    def loss_frame(self) -> pd.DataFrame:
        rows = []
        for epoch, b in enumerate(self.log, start=1):
            rows.append({"epoch": epoch, **b.terms(), "total": b.total, "lambda_kl": b.weights.get("kl", 0.0)})
        return pd.DataFrame(rows, columns=["epoch", *TERM_ORDER, "total", "lambda_kl"])


# ─────────────────────────────────────────────────────────────
# Gradients
# ─────────────────────────────────────────────────────────────
def sample_gradient(params: ParamStore, draw: SampleDraw, lam: Mapping[str, float], cfg: Config) -> SampleResult:
    tape = Tape()
    bound = params.bind(tape)
    loss = sample_objective(tape, bound, draw, lam, cfg)
    values = loss.values()
    total = float(loss.total.value)
    if not is_finite(loss):
        return SampleResult(grads={}, terms=values, total=total)
    grads = params.gradients(tape, bound, tape.backward(loss.total))
    return SampleResult(grads=grads, terms=values, total=total)


def _mean_grads(results: Sequence[SampleResult], names: Sequence[str]) -> Dict[str, np.ndarray]:
    out = {}
    for name in names:
        acc = np.zeros_like(results[0].grads[name])
        for r in results:
            acc = acc + r.grads[name]
        out[name] = acc / len(results)
    return out


def accumulate(results: Sequence[SampleResult], names: Sequence[str], accumulation_steps: int) -> Dict[str, np.ndarray]:
    """
    Batch gradient as the mean of `accumulation_steps` micro-batch means.
    Micro-batches are consecutive runs of `results`; a short batch gets
    fewer micro-batches.
    """
    size = max(1, math.ceil(len(results) / accumulation_steps))
    micro = [_mean_grads(results[i:i + size], names) for i in range(0, len(results), size)]
    out = {}
    for name in names:
        acc = np.zeros_like(micro[0][name])
        for m in micro:
            acc = acc + m[name]
        out[name] = acc / len(micro)
    return out


# ─────────────────────────────────────────────────────────────
# Loop
# ─────────────────────────────────────────────────────────────
def batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _epoch_breakdown(sums: Dict[str, float], count: int, cfg: Config, step: int, epoch: int) -> LossBreakdown:
    means = {name: sums[name] / count for name in TERM_ORDER}
    return total_loss(means, cfg.loss, step, epoch, cfg.n_init_epochs())


def train(
    clouds: Sequence[PointCloud],
    cfg: Config,
    *,
    params: Optional[ParamStore] = None,
    threads: int = 1,
    on_epoch: Optional[EpochCallback] = None,
) -> TrainResult:
    """
    Optimize encoder and denoiser on `clouds` (already normalized).

    Each epoch's LossBreakdown holds the mean term values over all samples
    and the total under the weights in force at the epoch's last step.
    """
    if not clouds:
        raise ValueError("training set is empty")
    tc = cfg.train
    params = params.copy() if params is not None else init_params(cfg.model, cfg.seed)
    names = params.trainable_names()
    opt = Adam(tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_eps)
    n_init = cfg.n_init_epochs()
    result = TrainResult(params=params)
    step = 0

    for epoch in range(tc.epochs):
        plan = batches(len(clouds), tc.batch_size, make_rng(cfg.seed, 1, epoch))
        sums = {name: 0.0 for name in TERM_ORDER}
        seen = 0
        for b, idx in enumerate(plan):
            lam = phase_weights(cfg.loss, step, epoch, n_init)
            progress = epoch + b / len(plan)
            draws = [draw_sample(clouds[i], make_rng(cfg.seed, 2, epoch, b, s), cfg, progress)
                     for s, i in enumerate(idx)]
            results = ordered_map(lambda d: sample_gradient(params, d, lam, cfg), draws, threads)

            for pos, r in enumerate(results):
                if not r.grads:
                    raise NonFiniteLoss(step, {"epoch": epoch, "sample": int(idx[pos]),
                                               "sigma": draws[pos].sigma, "terms": r.terms})
            grads = accumulate(results, names, tc.accumulation_steps)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(step, {"epoch": epoch, "batch": b, "reason": "non-finite gradient"})
            opt.step(params, grads)
            step += 1

            for r in results:
                for name in TERM_ORDER:
                    sums[name] += r.terms[name]
            seen += len(results)

        breakdown = _epoch_breakdown(sums, seen, cfg, max(step - 1, 0), epoch)
        result.log.append(breakdown)
        logger.info(
            "epoch %d/%d total=%.6g diff=%.4g chamfer=%.4g mse=%.4g kl=%.4g fps=%.4g",
            epoch + 1, tc.epochs, breakdown.total, breakdown.diff, breakdown.chamfer,
            breakdown.mse, breakdown.kl, breakdown.fps,
        )
        if on_epoch is not None:
            on_epoch(epoch, breakdown)

    result.steps = step
    return result


def split_dataset(items: Sequence, holdout: int) -> Tuple[list, list]:
    """(train, held-out): the last `holdout` items are held out."""
    items = list(items)
    if holdout >= len(items):
        raise ValueError(f"holdout ({holdout}) must be smaller than the dataset ({len(items)})")
    cut = len(items) - holdout
    return items[:cut], items[cut:]
