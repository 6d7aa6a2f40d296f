"""The 100-dimensional bimodal banana target and a two-mode coverage score."""
from __future__ import annotations

import logging
import math

import numpy as np
from scipy.cluster.vq import kmeans2

from .. import difftensor as dt

log = logging.getLogger(__name__)

DIM = 100
DATA = np.array([math.log(101.0), 0.0, 0.0])
LOG_SCALE = 0.3
CLAMP = -1e12


def banana_forward(x1, x2):
    """(log(100 (x2 - x1^2)^2 + (1 - x1)^2) / 0.3, x1, x2) for arrays of equal shape."""
    with np.errstate(divide="ignore"):
        f1 = np.log(100.0 * (x2 - x1 * x1) ** 2 + (1.0 - x1) ** 2) / LOG_SCALE
    return np.stack([f1, x1, x2], axis=-1)


def rosenbrock_logp(xi) -> np.ndarray:
    """Log target, batched over leading axes; -inf at the log singularity is clamped."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape[-1] != DIM:
        raise ValueError(f"expected {DIM} coordinates, got {xi.shape[-1]}")
    f = banana_forward(xi[..., 0], xi[..., 1])
    coupling = xi[..., 2:] - xi.sum(axis=-1, keepdims=True)
    out = -0.5 * np.sum((f - DATA) ** 2, axis=-1) - 0.5 * np.sum(coupling**2, axis=-1)
    bad = ~np.isfinite(out)
    if np.any(bad):
        log.warning("log target singular at %d point(s); clamping to %g", int(bad.sum()), CLAMP)
        out = np.where(bad, CLAMP, out)
    return out


def rosenbrock_logp_tensor(xi: dt.Tensor) -> dt.Tensor:
    """Differentiable version for (n, 100) tensors."""
    x1, x2 = xi[:, 0], xi[:, 1]
    inner = dt.square(x2 - dt.square(x1)) * 100.0 + dt.square(1.0 - x1)
    f1 = dt.log(inner) * (1.0 / LOG_SCALE)
    misfit = dt.square(f1 - DATA[0]) + dt.square(x1) + dt.square(x2)
    total = dt.sum_(xi, axis=-1)
    coupling = xi[:, 2:] - dt.reshape(total, (xi.shape[0], 1))
    return (misfit + dt.sum_(dt.square(coupling), axis=-1)) * -0.5


def rosenbrock_grad(xi) -> np.ndarray:
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    leaf = dt.variable(xi)
    with dt.Tape():
        return dt.grad_of(dt.sum_(rosenbrock_logp_tensor(leaf)), [leaf])[0]


def mode_centers(xy: np.ndarray, seed: int = 0) -> np.ndarray:
    """Two cluster centers of (x1, x2) samples, ordered by x2."""
    centers, _ = kmeans2(np.asarray(xy, float), 2, minit="++", seed=seed)
    return centers[np.argsort(centers[:, 1])]


def mode_coverage(xy: np.ndarray, centers: np.ndarray, radius: float = 0.5) -> np.ndarray:
    """Fraction of samples within ``radius`` of each center."""
    xy = np.asarray(xy, float)
    dist = np.linalg.norm(xy[:, None, :] - centers[None, :, :], axis=-1)
    return (dist < radius).mean(axis=0)


def mode_separation(xy: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Fraction of samples nearer to each center (a Voronoi split)."""
    dist = np.linalg.norm(np.asarray(xy, float)[:, None, :] - centers[None], axis=-1)
    return np.bincount(np.argmin(dist, axis=1), minlength=len(centers)) / len(xy)
