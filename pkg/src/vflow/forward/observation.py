"""Pointwise observation operators, Gaussian likelihoods and the unnormalized posterior."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import difftensor as dt
from ..errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ObservationOp:
    """Nearest-node sampling at fixed grid indices (one index tuple per observation)."""

    locations: tuple

    @property
    def count(self) -> int:
        return len(self.locations)

    def index_arrays(self) -> tuple:
        return tuple(np.array(axis) for axis in zip(*self.locations))


def nearest_index(x: float, n: int, periodic: bool) -> int:
    if periodic:
        return int(math.floor(x * n + 0.5)) % n
    return int(math.floor(x * (n - 1) + 0.5))


def interior_lattice(per_axis: int, n: int, ndim: int, periodic: bool) -> ObservationOp:
    """Uniform interior lattice x_j = j/(per_axis+1), j = 1..per_axis, on every axis."""
    coords = [nearest_index(j / (per_axis + 1), n, periodic) for j in range(1, per_axis + 1)]
    if ndim == 1:
        locs = tuple((c,) for c in coords)
    else:
        locs = tuple((a, b) for a in coords for b in coords)
    return ObservationOp(locs)


def observe(u, obs: ObservationOp):
    """Values of ``u`` (array or tensor, optional leading batch axes) at the locations."""
    shape = u.shape
    ndim = len(obs.locations[0])
    grid = shape[len(shape) - ndim:]
    for loc in obs.locations:
        if any(i < 0 or i >= g for i, g in zip(loc, grid)):
            raise ConfigError(f"observation location {loc} outside grid {grid}")
    idx = (Ellipsis,) + obs.index_arrays()
    if isinstance(u, dt.Tensor):
        return dt.getitem(u, idx)
    return np.asarray(u)[idx]


@dataclass(frozen=True, eq=False)
class Likelihood:
    """Gaussian likelihood with diagonal covariance noise_std**2 (scalar or per entry)."""

    y: np.ndarray
    noise_std: object

    def __post_init__(self):
        std = np.asarray(self.noise_std, dtype=float)
        if np.any(std < 0) or not np.all(np.isfinite(std)):
            raise ConfigError("noise_std must be finite and non-negative")
        if std.ndim and std.shape != np.shape(self.y):
            raise ShapeError("per-entry noise_std must match y")

    @property
    def sigma_eta(self) -> np.ndarray:
        std = np.broadcast_to(np.asarray(self.noise_std, float), np.shape(self.y))
        return np.diag(std**2)

    def precision_sqrt(self) -> np.ndarray:
        std = np.broadcast_to(np.asarray(self.noise_std, float), np.shape(self.y))
        if np.any(std == 0):
            raise ConfigError("zero noise: the misfit is undefined")
        return 1.0 / std


def misfit(g_xi, lik: Likelihood):
    """Half squared Mahalanobis distance between predictions and data (batched on leading axes)."""
    y = np.asarray(lik.y)
    if g_xi.shape[-1] != y.shape[-1]:
        raise ShapeError(f"prediction has {g_xi.shape[-1]} entries, data has {y.shape[-1]}")
    w = lik.precision_sqrt()
    if isinstance(g_xi, dt.Tensor):
        r = (dt.Tensor(y) - g_xi) * dt.Tensor(w)
        return dt.sum_(dt.square(r), axis=-1) * 0.5
    r = (y - np.asarray(g_xi)) * w
    return 0.5 * np.sum(r * r, axis=-1)


def log_unnorm_posterior(xi, lik: Likelihood, prior_mean, forward):
    """-misfit(forward(xi)) - |xi - prior_mean|^2 / 2 with identity prior covariance."""
    phi = misfit(forward(xi), lik)
    if isinstance(xi, dt.Tensor):
        diff = xi - dt.Tensor(np.asarray(prior_mean, float))
        return dt.neg(phi) - dt.sum_(dt.square(diff), axis=-1) * 0.5
    diff = np.asarray(xi) - np.asarray(prior_mean)
    return -phi - 0.5 * np.sum(diff * diff, axis=-1)


def noisy_observation(clean: np.ndarray, delta: float, rng) -> Likelihood:
    """y = clean + delta * max|clean| * eta with eta standard normal."""
    std = delta * float(np.max(np.abs(clean)))
    eta = rng.standard_normal(clean.shape)
    return Likelihood(clean + std * eta if delta else clean.copy(), std)


def save_observation(path, lik: Likelihood, obs: ObservationOp, seed) -> None:
    doc = {
        "y": [float(v) for v in np.asarray(lik.y)],
        "noise_std": np.asarray(lik.noise_std, float).tolist(),
        "locations": [list(loc) for loc in obs.locations],
        "seed": seed,
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_observation(path):
    doc = json.loads(Path(path).read_text())
    missing = {"y", "noise_std", "locations", "seed"} - set(doc)
    if missing:
        raise ConfigError(f"observation record lacks {sorted(missing)}")
    lik = Likelihood(np.asarray(doc["y"], float), doc["noise_std"])
    return lik, ObservationOp(tuple(tuple(loc) for loc in doc["locations"])), doc["seed"]
