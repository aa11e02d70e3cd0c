# src/model/gradcheck.py
"""
Finite-difference verification of tape gradients.

    report = grad_check(fn, {"w": w}, tol=1e-6)

`fn(tape, vars)` must build a scalar from the bound variables. Each
checked coordinate is compared against the central difference
(f(θ + h) − f(θ − h)) / 2h.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from src.config.schema import Config, ModelConfig
from src.geometry.pointcloud import PointCloud, make_rng, normalize
from src.model.objective import draw_sample, sample_objective
from src.model.params import init_params
from src.model.tape import Tape, Var
from src.utils.errors import GradMismatch

logger = logging.getLogger(__name__)

LossFn = Callable[[Tape, Dict[str, Var]], Var]

DEFAULT_STEP = 1e-5
MAX_PER_TENSOR = 200
# denominators below this are treated as absolute error
REL_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    per_param: Dict[str, float] = field(default_factory=dict)
    worst: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "tol": self.tol,
            "passed": self.passed,
            "n_checked": self.n_checked,
            "per_param": dict(self.per_param),
            "worst": list(self.worst),
        }


def _evaluate(fn: LossFn, values: Mapping[str, np.ndarray]) -> float:
    tape = Tape()
    out = fn(tape, {name: tape.leaf(v, name=name) for name, v in values.items()})
    return float(out.value)


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    fn: LossFn,
    params: Mapping[str, np.ndarray],
    tol: float = 1e-4,
    *,
    h: float = DEFAULT_STEP,
    max_per_tensor: int = MAX_PER_TENSOR,
    seed: int = 0,
    n_worst: int = 5,
    raise_on_fail: bool = True,
) -> GradCheckReport:
    """Compare tape gradients of `fn` with central differences."""
    values = {name: np.array(v, dtype=np.float64) for name, v in params.items()}

    tape = Tape()
    bound = {name: tape.leaf(v, name=name) for name, v in values.items()}
    out = fn(tape, bound)
    grads = tape.backward(out)
    analytic = {name: tape.grad(grads, var) for name, var in bound.items()}

    rng = make_rng(seed)
    rows: List[dict] = []
    per_param: Dict[str, float] = {}
    for name, value in values.items():
        size = value.size
        coords = np.arange(size) if size <= max_per_tensor else np.sort(rng.choice(size, max_per_tensor, replace=False))
        worst = 0.0
        for c in coords:
            orig = value.flat[c]
            value.flat[c] = orig + h
            f_plus = _evaluate(fn, values)
            value.flat[c] = orig - h
            f_minus = _evaluate(fn, values)
            value.flat[c] = orig

            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[name].flat[c])
            err = relative_error(a, numeric)
            worst = max(worst, err)
            rows.append({
                "param": name,
                "index": [int(i) for i in np.unravel_index(c, value.shape)] if value.ndim else [],
                "analytic": a,
                "numeric": numeric,
                "rel_err": err,
            })
        per_param[name] = worst

    rows.sort(key=lambda r: -r["rel_err"])
    report = GradCheckReport(
        max_rel_error=rows[0]["rel_err"] if rows else 0.0,
        tol=tol,
        n_checked=len(rows),
        per_param=per_param,
        worst=rows[:n_worst],
    )
    logger.debug("grad check: %d coordinates, max rel err %.3e", report.n_checked, report.max_rel_error)
    if raise_on_fail and not report.passed:
        raise GradMismatch(report.worst, tol)
    return report


# ─────────────────────────────────────────────────────────────
# Built-in suites
# ─────────────────────────────────────────────────────────────
def primitive_cases(seed: int = 0) -> Dict[str, tuple]:
    """(fn, params) per tape primitive, each reduced to a scalar by a fixed random projection."""
    rng = make_rng(seed, 17)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((3, 5))
    pos = rng.uniform(0.5, 2.0, (4, 3))
    proj = rng.standard_normal((4, 3))
    proj5 = rng.standard_normal((4, 5))
    # one dominant entry per column so the argmax is stable under ±h
    spread = a.copy()
    spread[[1, 3, 2], [0, 1, 2]] += 10.0

    def dot(tape: Tape, x: Var, weights: np.ndarray) -> Var:
        return tape.sum(tape.mul(x, weights))

    return {
        "add": (lambda t, v: dot(t, t.add(v["a"], v["c"]), proj), {"a": a, "c": rng.standard_normal((1, 3))}),
        "mul": (lambda t, v: dot(t, t.mul(v["a"], v["c"]), proj), {"a": a, "c": rng.standard_normal((4, 3))}),
        "matmul": (lambda t, v: dot(t, t.matmul(v["a"], v["b"]), proj5), {"a": a, "b": b}),
        "softmax": (lambda t, v: dot(t, t.softmax(v["a"], axis=-1), proj), {"a": a}),
        "sin": (lambda t, v: dot(t, t.sin(v["a"]), proj), {"a": a}),
        "cos": (lambda t, v: dot(t, t.cos(v["a"]), proj), {"a": a}),
        "exp": (lambda t, v: dot(t, t.exp(v["a"]), proj), {"a": a}),
        "log": (lambda t, v: dot(t, t.log(v["p"]), proj), {"p": pos}),
        "sqrt": (lambda t, v: dot(t, t.sqrt(v["p"]), proj), {"p": pos}),
        "sigmoid": (lambda t, v: dot(t, t.sigmoid(v["a"]), proj), {"a": a}),
        # kinks at 0 are avoided by keeping |a| ≥ 0.5
        "relu": (lambda t, v: dot(t, t.relu(v["a"]), proj), {"a": np.where(a >= 0, a + 0.5, a - 0.5)}),
        "mean": (lambda t, v: t.sum(t.mul(t.mean(v["a"], axis=0), proj[0])), {"a": a}),
        "concat": (lambda t, v: dot(t, t.concat([v["a"], v["c"]], axis=-1), proj5),
                   {"a": a, "c": rng.standard_normal((4, 2))}),
        "gather": (lambda t, v: dot(t, t.gather(v["a"], np.array([0, 2, 2, 3])), proj), {"a": a}),
        "sub": (lambda t, v: dot(t, t.sub(v["a"], v["c"]), proj), {"a": a, "c": rng.standard_normal((1, 3))}),
        "pow": (lambda t, v: dot(t, t.pow(v["p"], 1.7), proj), {"p": pos}),
        # entries stay ≥ 0.04 away from the bounds
        "clip": (lambda t, v: dot(t, t.clip(v["a"], -0.5, 0.5), proj),
                 {"a": np.linspace(-1.2, 1.2, 12).reshape(4, 3)}),
        "max": (lambda t, v: t.sum(t.mul(t.max(v["a"], axis=0), proj[0])), {"a": spread}),
        "sum": (lambda t, v: t.sum(t.mul(t.sum(v["a"], axis=0), proj[0])), {"a": a}),
        "reshape": (lambda t, v: dot(t, t.reshape(v["a"], (3, 4)), proj.reshape(3, 4)), {"a": a}),
        "transpose": (lambda t, v: dot(t, t.transpose(v["a"]), proj.T), {"a": a}),
        "broadcast_to": (lambda t, v: dot(t, t.broadcast_to(v["c"], (4, 3)), proj),
                         {"c": rng.standard_normal((1, 3))}),
    }


def attention_case(seed: int = 0) -> tuple:
    """Softmax-through-attention path in isolation: Σ R ⊙ softmax(Q Kᵀ/√D) X."""
    rng = make_rng(seed, 23)
    points = rng.uniform(-1, 1, (12, 3))
    weights = rng.standard_normal((3, 3))

    def fn(tape: Tape, v: Dict[str, Var]) -> Var:
        scores = tape.mul(tape.matmul(v["q"], tape.transpose(v["k"])), 1.0 / np.sqrt(v["k"].shape[-1]))
        kp = tape.matmul(tape.softmax(scores, axis=-1), points)
        return tape.sum(tape.mul(kp, weights))

    return fn, {"q": rng.standard_normal((3, 8)), "k": rng.standard_normal((12, 8))}


def gradcheck_config(seed: int) -> Config:
    """Narrow model for the composed-loss check; every term carries weight."""
    return Config(
        seed=seed,
        model=ModelConfig(
            n_keypoints=4, aux_dim=2, feature_dim=8, embed_dim=8, fourier_features=4,
            hidden_dim=8, cond_dim=4, noise_embed_dim=4, film_depth=2,
        ),
        loss={"n_anchors": 6, "warmup_steps": 1},
        train={"epochs": 1, "batch_size": 1, "accumulation_steps": 1},
    )


def model_case(seed: int = 0, n_points: int = 32, cfg: Optional[Config] = None) -> tuple:
    """Full ℒ (encoder + denoiser, all five terms) on one `n_points` cloud."""
    cfg = cfg or gradcheck_config(seed)
    rng = make_rng(seed, 29)
    pc, _, _ = normalize(PointCloud(rng.uniform(-1, 1, (n_points, 3))))
    draw = draw_sample(pc, rng, cfg, progress=0.0)
    lam = {"fps": 1.0, "diff": 3.0, "chamfer": 1.0, "mse": 1.0, "kl": 1.0}
    params = init_params(cfg.model, seed)

    frozen = {name: params[name] for name in params.frozen}
    base = Tape()
    latent = sample_objective(base, params.bind(base), draw, lam, cfg).z0.value.copy()

    def fn(tape: Tape, v: Dict[str, Var]) -> Var:
        bound = dict(v)
        for name, value in frozen.items():
            bound[name] = tape.constant(value)
        return sample_objective(tape, bound, draw, lam, cfg, fixed_latent=latent).total

    trainable = {name: params[name] for name in params.trainable_names()}
    return fn, trainable


def run_suite(tol: float = 1e-4, seed: int = 0, max_per_tensor: int = MAX_PER_TENSOR) -> dict:
    """Primitives at min(tol, 1e-6), the attention path and the full loss at `tol`."""
    prim_tol = min(tol, 1e-6)
    primitives = {name: grad_check(fn, p, prim_tol, seed=seed, raise_on_fail=False)
                  for name, (fn, p) in primitive_cases(seed).items()}
    attn_fn, attn_params = attention_case(seed)
    attn = grad_check(attn_fn, attn_params, tol, seed=seed, raise_on_fail=False)
    model_fn, model_params = model_case(seed)
    full = grad_check(model_fn, model_params, tol, seed=seed, max_per_tensor=max_per_tensor, raise_on_fail=False)

    max_err = max([r.max_rel_error for r in primitives.values()] + [attn.max_rel_error, full.max_rel_error])
    return {
        "max_rel_error": max_err,
        "passed": all(r.passed for r in primitives.values()) and attn.passed and full.passed,
        "primitives": {name: r.max_rel_error for name, r in primitives.items()},
        "attention": attn.max_rel_error,
        "model": full.to_dict(),
    }
