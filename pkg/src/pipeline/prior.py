# src/pipeline/prior.py
"""
Keypoint prior for unconditional generation: PCA on vec(K) keeps the
leading components that explain a fraction v of the variance, and a
Gaussian KDE over the projected training coordinates is sampled and
mapped back through the inverse projection.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import gaussian_kde

from src.geometry.pointcloud import KeypointSet
from src.utils.errors import TooFewSamples

logger = logging.getLogger(__name__)

PRIOR_ARRAYS = "prior.npz"
PRIOR_META = "prior.json"


@dataclass
class KeypointPrior:
    mean: np.ndarray            # (3d,)
    basis: np.ndarray           # (r, 3d), orthonormal rows
    coords: np.ndarray          # (n, r) training coordinates in the subspace
    samples: np.ndarray         # (n, 3d) training vectors
    variances: np.ndarray       # (r,) per-component variance
    total_variance: float
    bandwidth: float            # KDE factor on the coordinate covariance; 0 = plain resampling
    aux_mean: np.ndarray        # (m,)
    variance_retained: float = 0.95

    @property
    def rank(self) -> int:
        return self.basis.shape[0]

    @property
    def n_keypoints(self) -> int:
        return self.mean.size // 3

    @property
    def n_train(self) -> int:
        return self.samples.shape[0]

    def project(self, vecs: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(vecs) - self.mean) @ self.basis.T

    def inverse(self, coords: np.ndarray) -> np.ndarray:
        return self.mean + np.atleast_2d(coords) @ self.basis

    def kde(self) -> Optional[gaussian_kde]:
        if self.rank == 0 or self.bandwidth == 0:
            return None
        return gaussian_kde(self.coords.T, bw_method=self.bandwidth)

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "n_train": self.n_train,
            "n_keypoints": self.n_keypoints,
            "bandwidth": self.bandwidth,
            "variance_retained": self.variance_retained,
            "explained": float(self.variances.sum() / self.total_variance) if self.total_variance > 0 else 1.0,
            "aux_mean": self.aux_mean.tolist(),
        }

    # ---------- persistence --------------------------------
    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.savez(directory / PRIOR_ARRAYS, mean=self.mean, basis=self.basis, coords=self.coords,
                 samples=self.samples, variances=self.variances, aux_mean=self.aux_mean)
        meta = self.to_dict()
        meta["total_variance"] = self.total_variance
        (directory / PRIOR_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "KeypointPrior":
        directory = Path(directory)
        meta = json.loads((directory / PRIOR_META).read_text(encoding="utf-8"))
        with np.load(directory / PRIOR_ARRAYS) as data:
            arrays = {k: data[k] for k in data.files}
        return cls(
            mean=arrays["mean"],
            basis=arrays["basis"].reshape(-1, arrays["mean"].size),
            coords=arrays["coords"].reshape(arrays["samples"].shape[0], -1),
            samples=arrays["samples"],
            variances=arrays["variances"],
            total_variance=float(meta["total_variance"]),
            bandwidth=float(meta["bandwidth"]),
            aux_mean=arrays["aux_mean"],
            variance_retained=float(meta["variance_retained"]),
        )


def scott_factor(n: int, dims: int) -> float:
    return n ** (-1.0 / (dims + 4))


def fit_prior(
    keypoint_sets: Sequence[Union[KeypointSet, np.ndarray]],
    aux_latents: Optional[Sequence[np.ndarray]] = None,
    variance_retained: float = 0.95,
    bandwidth: Optional[float] = None,
) -> KeypointPrior:
    """PCA + KDE over vec(K); `bandwidth` None picks Scott's rule in the retained subspace."""
    if len(keypoint_sets) < 2:
        raise TooFewSamples(len(keypoint_sets), 2)
    x = np.stack([k.vec() if isinstance(k, KeypointSet) else np.asarray(k, dtype=np.float64).reshape(-1)
                  for k in keypoint_sets])
    n, dim = x.shape
    # offsetting by the first row keeps identical inputs exactly reproducible
    mean = x[0] + (x - x[0]).mean(axis=0)
    centered = x - mean

    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    variances = s * s / (n - 1)
    total = float(variances.sum())
    if total > 0:
        ratio = np.cumsum(variances) / total
        rank = int(min(np.searchsorted(ratio, variance_retained - 1e-12) + 1, np.count_nonzero(variances)))
    else:
        rank = 0
    basis = vt[:rank]
    coords = centered @ basis.T

    if bandwidth is None:
        bandwidth = scott_factor(n, rank) if rank else 0.0

    if aux_latents is not None and len(aux_latents):
        aux = np.stack([np.asarray(z, dtype=np.float64) for z in aux_latents])
        aux_mean = aux.mean(axis=0)
    else:
        aux_mean = np.zeros(0)

    logger.info("keypoint prior: %d sets, rank %d/%d, bandwidth %.4g", n, rank, dim, bandwidth)
    return KeypointPrior(mean=mean, basis=basis, coords=coords, samples=x, variances=variances[:rank],
                         total_variance=total, bandwidth=float(bandwidth), aux_mean=aux_mean,
                         variance_retained=variance_retained)


def sample_keypoints(prior: KeypointPrior, rng: np.random.Generator) -> KeypointSet:
    """KDE draw in the PCA subspace mapped back to d×3 keypoints."""
    if prior.rank == 0:
        return KeypointSet.from_vec(prior.mean.copy())
    if prior.bandwidth == 0:
        return KeypointSet.from_vec(prior.samples[int(rng.integers(prior.n_train))].copy())
    coords = prior.kde().resample(1, seed=rng)[:, 0]
    return KeypointSet.from_vec(prior.inverse(coords)[0])
