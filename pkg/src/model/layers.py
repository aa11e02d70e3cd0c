# src/model/layers.py
from __future__ import annotations

import math
from typing import Dict

import numpy as np

from src.model.tape import Tape, Var

Bound = Dict[str, Var]


def linear(tape: Tape, bound: Bound, name: str, x: Var) -> Var:
    """x @ W + b for the `name.w` / `name.b` pair."""
    return tape.add(tape.matmul(x, bound[f"{name}.w"]), bound[f"{name}.b"])


def activate(tape: Tape, x: Var, kind: str = "silu") -> Var:
    if kind == "relu":
        return tape.relu(x)
    return tape.mul(x, tape.sigmoid(x))


def dense(tape: Tape, bound: Bound, name: str, x: Var, act: str = "silu") -> Var:
    return activate(tape, linear(tape, bound, name, x), act)


def fourier_features(tape: Tape, x: Var, freqs: Var) -> Var:
    """γ(x) = [sin(2π xF), cos(2π xF)] row-wise for x of shape (N, 3)."""
    proj = tape.mul(tape.matmul(x, freqs), 2.0 * math.pi)
    return tape.concat([tape.sin(proj), tape.cos(proj)], axis=-1)


def fourier_encode(x: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Array version of `fourier_features`; a single 3-vector gives a 1-D result."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    tape = Tape()
    out = fourier_features(tape, tape.constant(x.reshape(-1, 3)), tape.constant(freqs)).value
    return out[0] if single else out


def sinusoidal_embedding(tape: Tape, value: float, dim: int) -> Var:
    """Transformer-style embedding of a scalar: [sin(v·f), cos(v·f)], f log-spaced."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    arg = tape.constant(np.full((1, half), float(value)) * freqs)
    return tape.concat([tape.sin(arg), tape.cos(arg)], axis=-1)


def film(tape: Tape, bound: Bound, name: str, h: Var, cond: Var, act: str = "silu") -> Var:
    """act((hW + b)·(1 + γ(cond)) + β(cond)): feature-wise scale and shift."""
    u = linear(tape, bound, name, h)
    scale = linear(tape, bound, f"{name}.gamma", cond)
    shift = linear(tape, bound, f"{name}.beta", cond)
    return activate(tape, tape.add(tape.mul(u, tape.add(scale, 1.0)), shift), act)


def attention(tape: Tape, queries: Var, keys: Var, values: Var) -> tuple:
    """Single-head scaled dot-product attention; returns (weights, output)."""
    scores = tape.mul(tape.matmul(queries, tape.transpose(keys)), 1.0 / math.sqrt(keys.shape[-1]))
    weights = tape.softmax(scores, axis=-1)
    return weights, tape.matmul(weights, values)
