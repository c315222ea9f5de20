"""PCA fitted on intermediate features: projection on the client, reconstruction on the server."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, RankError

# eigenvalues below this fraction of the largest count as numerically zero
_RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PcaTransform:
    mean: np.ndarray          # (d,)
    components: np.ndarray    # (k, d), orthonormal rows, descending variance
    eigenvalues: np.ndarray   # (k,)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        comp = np.atleast_2d(np.asarray(self.components, dtype=np.float64))
        ev = np.asarray(self.eigenvalues, dtype=np.float64)
        if mean.ndim != 1 or comp.shape[1] != mean.shape[0] or ev.shape != (comp.shape[0],):
            raise DimensionError(
                f"inconsistent PCA shapes: mean {mean.shape}, components {comp.shape}, "
                f"eigenvalues {ev.shape}")
        if comp.shape[0] > comp.shape[1]:
            raise DimensionError("k cannot exceed d")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def k(self) -> int:
        return self.components.shape[0]


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each row so that its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(vecs.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vecs * signs[:, None]


def fit_pca(features, k: int) -> PcaTransform:
    """Top-``k`` eigenvectors of the sample covariance (divisor ``n - 1``)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"features must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ValueError("PCA needs at least two samples")
    if not 1 <= k <= min(n, d):
        raise RankError(f"k={k} is out of range for {n} samples in {d} dimensions", min(n, d))
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order].T
    top = vals[0] if vals.size else 0.0
    usable = int(np.sum(vals > _RANK_TOL * max(top, np.finfo(float).tiny)))
    if top <= 0.0:
        raise RankError("features are all identical; no principal direction exists", 0)
    if k > usable and k < d:
        # k == d is always a valid (complete) orthonormal basis
        raise RankError(f"k={k} exceeds the numerical rank of the features", usable)
    return PcaTransform(mean, _fix_signs(vecs[:k]), vals[:k])


def project(t: PcaTransform, x) -> np.ndarray:
    """``components @ (x - mean)``; accepts one vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != t.d:
        raise DimensionError(f"expected feature width {t.d}, got {x.shape[-1]}")
    return (x - t.mean) @ t.components.T


def reconstruct(t: PcaTransform, z) -> np.ndarray:
    """``components.T @ z + mean``; accepts one vector or a batch of rows."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != t.k:
        raise DimensionError(f"expected {t.k} PCA coordinates, got {z.shape[-1]}")
    return z @ t.components + t.mean


def total_variance(features) -> float:
    x = np.asarray(features, dtype=np.float64)
    return float(np.trace(np.atleast_2d(np.cov(x, rowvar=False))))
