"""Stein variational gradient descent with an RBF kernel and median bandwidth."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

log = logging.getLogger(__name__)


def median_bandwidth(x: np.ndarray) -> float:
    """h = med^2 / log n, with med the median distance over distinct particle pairs."""
    n = len(x)
    if n < 2:
        raise ConfigError("SVGD needs at least two particles")
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    med = float(np.median(dist[np.triu_indices(n, 1)]))
    return med * med / np.log(n)


def svgd_direction(x: np.ndarray, grad: np.ndarray, h: float | None = None) -> np.ndarray:
    """phi(x_i) = mean_j [k(x_j, x_i) grad_j + d/dx_j k(x_j, x_i)]."""
    n = len(x)
    if h is None:
        h = median_bandwidth(x)
    if h == 0.0:
        log.warning("all particles coincide; kernel repulsion vanishes (falling back to h=1)")
        h = 1.0
    diff = x[:, None, :] - x[None, :, :]                  # x_i - x_j
    k = np.exp(-np.sum(diff * diff, axis=-1) / h)
    repulsion = (2.0 / h) * np.einsum("ij,ijd->id", k, diff)
    return (k @ grad + repulsion) / n


@dataclass
class SvgdEnsemble:
    particles: np.ndarray
    stepsize: float = 1e-2
    decay: float = 0.9
    fudge: float = 1e-6
    history: np.ndarray | None = field(default=None, repr=False)
    steps: int = 0

    def __post_init__(self):
        self.particles = np.array(self.particles, dtype=np.float64)
        if self.particles.ndim != 2 or len(self.particles) < 2:
            raise ConfigError("SVGD needs a (n, d) particle array with n >= 2")


def svgd_step(ens: SvgdEnsemble, grad_logp_fn) -> SvgdEnsemble:
    """One Adagrad-scaled update; ``grad_logp_fn`` maps (n, d) -> (n, d)."""
    phi = svgd_direction(ens.particles, np.asarray(grad_logp_fn(ens.particles), float))
    sq = phi * phi
    ens.history = sq if ens.history is None else ens.decay * ens.history + (1 - ens.decay) * sq
    ens.particles = ens.particles + ens.stepsize * phi / (ens.fudge + np.sqrt(ens.history))
    ens.steps += 1
    return ens


def svgd_run(ens: SvgdEnsemble, grad_logp_fn, iters: int) -> SvgdEnsemble:
    for _ in range(iters):
        svgd_step(ens, grad_logp_fn)
    return ens
