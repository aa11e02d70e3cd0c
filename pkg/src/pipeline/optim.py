# src/pipeline/optim.py
from __future__ import annotations

from typing import Dict

import numpy as np

from src.model.params import ParamStore


class Adam:
    """Adaptive-moment updates on a ParamStore, in place, trainable tensors only."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: ParamStore, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in params.trainable_names():
            g = grads[name]
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            params.tensors[name] = params.tensors[name] - self.lr * update
