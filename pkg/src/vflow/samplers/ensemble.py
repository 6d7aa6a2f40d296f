"""Affine-invariant ensemble sampler (stretch move, red/black half updates)."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

log = logging.getLogger(__name__)


def draw_stretch(n: int, a: float, rng) -> np.ndarray:
    """z with density proportional to 1/sqrt(z) on [1/a, a]."""
    return ((a - 1.0) * rng.random(n) + 1.0) ** 2 / a


def stretch_proposal(x: np.ndarray, partner: np.ndarray, z: np.ndarray) -> np.ndarray:
    return partner + np.asarray(z)[..., None] * (x - partner)


def stretch_log_factor(z: np.ndarray, d: int) -> np.ndarray:
    return (d - 1) * np.log(z)


@dataclass
class EnsembleResult:
    samples: np.ndarray          # (retained steps * walkers, d)
    acceptance_rate: float
    final: np.ndarray


def ensemble_mcmc_run(logp_fn, init: np.ndarray, burn: int, steps: int, rng, a: float = 2.0,
                      thin: int = 1) -> EnsembleResult:
    """``logp_fn`` maps (n, d) -> (n,). Returns post-burn-in states, every ``thin``-th sweep."""
    walkers = np.array(init, dtype=np.float64)
    n, d = walkers.shape
    if n < 2 * d or n % 2:
        raise ConfigError(f"need an even number of walkers >= 2d, got {n} for d={d}")
    lp = np.asarray(logp_fn(walkers), dtype=np.float64)
    halves = (np.arange(0, n // 2), np.arange(n // 2, n))
    kept, accepted, proposed = [], 0, 0
    for sweep in range(burn + steps):
        for s in (0, 1):
            active, other = halves[s], halves[1 - s]
            partners = walkers[rng.choice(other, size=active.size)]
            z = draw_stretch(active.size, a, rng)
            prop = stretch_proposal(walkers[active], partners, z)
            lp_prop = np.asarray(logp_fn(prop), dtype=np.float64)
            log_ratio = stretch_log_factor(z, d) + lp_prop - lp[active]
            take = np.log(rng.random(active.size)) < log_ratio
            walkers[active[take]] = prop[take]
            lp[active[take]] = lp_prop[take]
            accepted += int(take.sum())
            proposed += active.size
        if sweep >= burn and (sweep - burn) % thin == 0:
            kept.append(walkers.copy())
    rate = accepted / proposed
    log.info("ensemble sampler acceptance rate %.3f", rate)
    samples = np.concatenate(kept) if kept else np.empty((0, d))
    return EnsembleResult(samples, rate, walkers)
