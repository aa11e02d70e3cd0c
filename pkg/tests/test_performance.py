# tests/test_performance.py
import itertools
import math
import time

import numpy as np

from src.config.schema import EdmConfig
from src.edm.sampler import sample_shape
from src.geometry.pointcloud import make_rng
from src.losses.terms import chamfer_oneway
from src.metrics.distances import chamfer_symmetric, emd


def _brute_chamfer(a, b):
    mins = []
    for p in a:
        best = math.inf
        for q in b:
            dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
            best = min(best, dx * dx + dy * dy + dz * dz)
        mins.append(best)
    return math.fsum(mins) / len(mins)


def _brute_emd(a, b):
    n = len(a)
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return min(math.fsum(cost[i, j] for i, j in enumerate(p)) for p in itertools.permutations(range(n))) / n


def test_chamfer_oracle_500_instances():
    """Accelerated one-way Chamfer equals the double loop on every instance"""
    start = time.time()
    for trial in range(500):
        rng = make_rng(100, trial)
        a = rng.uniform(-1, 1, (int(rng.integers(1, 17)), 3))
        b = rng.uniform(-1, 1, (int(rng.integers(1, 17)), 3))
        assert chamfer_oneway(a, b) == _brute_chamfer(a, b)
    elapsed = time.time() - start
    print(f"Chamfer oracle completed in {elapsed:.2f} seconds")
    assert elapsed < 5


def test_emd_oracle_200_instances():
    """Exact assignment equals enumeration of every bijection"""
    start = time.time()
    for trial in range(200):
        rng = make_rng(200, trial)
        n = int(rng.integers(1, 7))
        a, b = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (n, 3))
        assert abs(emd(a, b) - _brute_emd(a, b)) <= 1e-9
    elapsed = time.time() - start
    print(f"EMD oracle completed in {elapsed:.2f} seconds")
    assert elapsed < 10


def test_sampler_runtime():
    target = make_rng(3).uniform(-1, 1, (256, 3))
    start = time.time()
    out = sample_shape(lambda x, sigma, z0: target, np.zeros(35), len(target), EdmConfig(), make_rng(4))
    elapsed = time.time() - start
    assert chamfer_symmetric(out, target) < 1e-3
    assert elapsed < 10
