"""Preconditioned Crank-Nicolson MCMC for Gaussian priors."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class PcnState:
    m: np.ndarray
    phi: float
    beta: float
    prior_mean: np.ndarray
    prior_sqrt: np.ndarray      # lower Cholesky factor of the prior covariance
    accepted: int = 0
    proposed: int = 0

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


def pcn_init(misfit_fn, prior_mean, beta=0.1, prior_cov=None, start=None) -> PcnState:
    mu0 = np.asarray(prior_mean, dtype=np.float64)
    cov = np.eye(mu0.size) if prior_cov is None else np.asarray(prior_cov, dtype=np.float64)
    m = mu0.copy() if start is None else np.asarray(start, dtype=np.float64).copy()
    return PcnState(m, float(misfit_fn(m)), beta, mu0, np.linalg.cholesky(cov))


def pcn_propose(state: PcnState, eta: np.ndarray) -> np.ndarray:
    """Prior-reversible move: sqrt(1 - beta^2) (m - m0) + m0 + beta * C0^(1/2) eta."""
    b = state.beta
    return (np.sqrt(1.0 - b * b) * (state.m - state.prior_mean) + state.prior_mean
            + b * (state.prior_sqrt @ eta))


def acceptance_probability(phi_current: float, phi_proposed: float) -> float:
    return float(np.exp(min(0.0, phi_current - phi_proposed)))


def pcn_step(state: PcnState, misfit_fn, rng) -> PcnState:
    proposal = pcn_propose(state, rng.standard_normal(state.m.size))
    phi_new = float(misfit_fn(proposal))
    state.proposed += 1
    if np.isfinite(phi_new) and rng.random() < acceptance_probability(state.phi, phi_new):
        state.m, state.phi = proposal, phi_new
        state.accepted += 1
    return state


@dataclass
class PcnResult:
    samples: np.ndarray
    mean: np.ndarray
    acceptance_rate: float


def pcn_run(misfit_fn, prior_mean, iters=5000, beta=0.1, burn=0.2, thin=10, rng=None,
            prior_cov=None, start=None) -> PcnResult:
    """Run a chain, drop the first ``burn`` fraction and keep every ``thin``-th state."""
    rng = rng if rng is not None else np.random.default_rng(0)
    state = pcn_init(misfit_fn, prior_mean, beta, prior_cov, start)
    first = int(np.floor(burn * iters))
    kept = []
    for it in range(iters):
        pcn_step(state, misfit_fn, rng)
        if it >= first and (it - first) % thin == 0:
            kept.append(state.m.copy())
    samples = np.array(kept).reshape(len(kept), state.m.size)
    log.info("pCN acceptance rate %.3f over %d proposals", state.acceptance_rate, iters)
    return PcnResult(samples, samples.mean(axis=0), state.acceptance_rate)


def batch_means_stderr(samples: np.ndarray, n_batches: int = 20) -> np.ndarray:
    """Monte Carlo standard error of the sample mean from non-overlapping batch means."""
    n = len(samples) // n_batches * n_batches
    means = samples[:n].reshape(n_batches, -1, samples.shape[1]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)
