"""Unscented Kalman inversion with a regularizing evolution step.

The evolution model m <- r0 + alpha (m - r0) + omega keeps iterates near the anchor
r0; the observation model y = G(m) + nu is linearized by symmetric sigma points.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

log = logging.getLogger(__name__)

JITTER = 1e-10


@dataclass
class UkiState:
    mean: np.ndarray
    cov: np.ndarray
    alpha: float
    r0: np.ndarray
    sigma_omega: np.ndarray
    sigma_nu: np.ndarray      # observation-error covariance used in the update
    y: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")


def uki_init(y, sigma_eta, r0, alpha=0.5, prior_cov=None, sigma_nu_factor=2.0,
             sigma_omega=None) -> UkiState:
    """Defaults: Sigma_omega = (2 - alpha^2) C0 and Sigma_nu = 2 Sigma_eta.

    ``sigma_eta`` may be a scalar std, a vector of stds or a full covariance.
    """
    r0 = np.asarray(r0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c0 = np.eye(r0.size) if prior_cov is None else np.asarray(prior_cov, dtype=np.float64)
    s = np.asarray(sigma_eta, dtype=np.float64)
    noise_cov = s if s.ndim == 2 else np.diag(np.broadcast_to(s, y.shape) ** 2)
    omega = (2.0 - alpha * alpha) * c0 if sigma_omega is None else np.asarray(sigma_omega, float)
    return UkiState(r0.copy(), c0.copy(), alpha, r0, omega, sigma_nu_factor * noise_cov, y)


def sigma_points(mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Rows: the mean, then mean + sqrt(d) L_j and mean - sqrt(d) L_j for Cholesky columns L_j."""
    d = mean.size
    spread = np.sqrt(d) * np.linalg.cholesky(cov).T
    return np.vstack([mean, mean + spread, mean - spread])


def sigma_weights(d: int) -> np.ndarray:
    w = np.full(2 * d + 1, 1.0 / (2 * d))
    w[0] = 0.0
    return w


def unscented_mean(values: np.ndarray) -> np.ndarray:
    d = (len(values) - 1) // 2
    return sigma_weights(d) @ values


def _repair(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov)[0] <= 0.0:
        log.warning("UKI covariance lost positive definiteness; adding %.0e jitter", JITTER)
        cov = cov + JITTER * np.eye(len(cov))
    return cov


def uki_step(state: UkiState, forward_ensemble_fn) -> UkiState:
    """One predict/analysis cycle. ``forward_ensemble_fn`` maps (n, d) -> (n, m)."""
    a = state.alpha
    m_hat = state.r0 + a * (state.mean - state.r0)
    c_hat = _repair(a * a * state.cov + state.sigma_omega)
    pts = sigma_points(m_hat, c_hat)
    g = np.asarray(forward_ensemble_fn(pts), dtype=np.float64)
    w = sigma_weights(m_hat.size)
    g_mean = w @ g
    dth = pts - m_hat
    dg = g - g_mean
    c_ty = (dth * w[:, None]).T @ dg
    c_yy = (dg * w[:, None]).T @ dg
    if not np.all(np.isfinite(state.sigma_nu)):
        state.mean, state.cov = m_hat, c_hat
        return state
    gain = np.linalg.solve(c_yy + state.sigma_nu, c_ty.T).T
    state.mean = m_hat + gain @ (state.y - g_mean)
    state.cov = _repair(c_hat - gain @ c_ty.T)
    return state


def uki_run(forward_ensemble_fn, state: UkiState, iters: int, callback=None) -> UkiState:
    for it in range(iters):
        uki_step(state, forward_ensemble_fn)
        if callback is not None:
            callback(it, state)
    return state


def augment_with_prior(forward_ensemble_fn, y, sigma_eta, prior_mean, prior_cov=None):
    """Append the prior as pseudo-observations: G_aug(m) = [G(m); m], y_aug = [y; prior_mean].

    Returns (forward_aug, y_aug, noise_cov_aug). With alpha = 1 the update's fixed point
    is the minimizer of the misfit plus the prior penalty.
    """
    y = np.asarray(y, dtype=np.float64)
    mu0 = np.asarray(prior_mean, dtype=np.float64)
    c0 = np.eye(mu0.size) if prior_cov is None else np.asarray(prior_cov, dtype=np.float64)
    s = np.asarray(sigma_eta, dtype=np.float64)
    noise = s if s.ndim == 2 else np.diag(np.broadcast_to(s, y.shape) ** 2)
    cov = np.zeros((y.size + mu0.size,) * 2)
    cov[:y.size, :y.size] = noise
    cov[y.size:, y.size:] = c0

    def forward_aug(pts):
        return np.hstack([np.asarray(forward_ensemble_fn(pts)), pts])

    return forward_aug, np.concatenate([y, mu0]), cov
