"""Variational Flow model: flow prior over a latent code, conditional-flow encoder,
diagonal Gaussian decoder. Also a plain Gaussian VAE used as a comparison baseline.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import difftensor as dt
from .difftensor.nn import MLP
from .errors import ConfigError, NumericError
from .flows import LOG_2PI, SIGMA_FLOOR, FlowStack, diag_normal_logpdf

log = logging.getLogger(__name__)

SOFTPLUS_INV_ONE = 0.5413  # softplus(0.5413) ~= 1


@dataclass(frozen=True)
class VfConfig:
    latent: int = 16
    prior_layers: int = 6
    encoder_layers: int = 2
    subnet_hidden: int = 32
    subnet_depth: int = 2
    mask_groups: int = 4
    decoder_hidden: int = 64
    decoder_depth: int = 5


class GaussianDecoder:
    """z -> (mu, sigma) with sigma = softplus(.) + 1e-4; ``depth=0`` gives an affine decoder."""

    def __init__(self, k, d, hidden, depth, rng, name="decoder"):
        self.trunk = MLP([k] + [hidden] * depth, rng, f"{name}.trunk") if depth else None
        width = hidden if depth else k
        self.mu_head = dt.Linear(width, d, rng, f"{name}.mu")
        self.sigma_head = dt.Linear(width, d, rng, f"{name}.sigma", zero=True)
        self.sigma_head.bias.data[:] = SOFTPLUS_INV_ONE

    def params(self):
        trunk = self.trunk.params() if self.trunk else []
        return trunk + self.mu_head.params() + self.sigma_head.params()

    def __call__(self, z):
        h = dt.tanh(self.trunk(z)) if self.trunk else dt.as_tensor(z)
        return self.mu_head(h), dt.softplus(self.sigma_head(h)) + SIGMA_FLOOR


class VfModel:
    def __init__(self, d, config: VfConfig = VfConfig(), rng=None):
        if config.latent >= d:
            raise ConfigError(f"latent size {config.latent} must be below the data size {d}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d, self.k, self.config = d, config.latent, config
        self.prior = FlowStack(self.k, config.prior_layers, 0, config.subnet_hidden,
                               config.subnet_depth, config.mask_groups, rng, "prior")
        self.encoder = FlowStack(self.k, config.encoder_layers, d, config.subnet_hidden,
                                 config.subnet_depth, config.mask_groups, rng, "encoder")
        self.decoder = GaussianDecoder(self.k, d, config.decoder_hidden, config.decoder_depth,
                                       rng)

    def params(self):
        return self.prior.params() + self.encoder.params() + self.decoder.params()

    def decoder_logdensity(self, x, z):
        mu, sigma = self.decoder(z)
        return diag_normal_logpdf(dt.as_tensor(x), mu, sigma)

    def sample_joint(self, n, rng):
        """Reparameterized joint draw: z from the flow prior, x from the decoder.

        Returns (z, log p(z), x, log p(x|z)); all tensors stay differentiable.
        """
        z, log_pz = self.prior.sample(n, rng)
        mu, sigma = self.decoder(z)
        eps = rng.standard_normal((n, self.d))
        x = mu + sigma * dt.Tensor(eps)
        log_px = diag_normal_logpdf(x, mu, sigma)
        return z, log_pz, x, log_px

    def encoder_logdensity(self, z, x):
        return self.encoder.log_density(z, x)

    def unnorm_loss(self, target, n, rng):
        """Monte Carlo estimate of KL(VF joint || encoder x target) minus the log normalizer."""
        z, log_pz, x, log_px = self.sample_joint(n, rng)
        log_q = self.encoder_logdensity(z, x)
        log_target = target(x)
        bad = ~np.isfinite(log_target.data)
        if np.any(bad):
            err = NumericError("target log-density is not finite")
            err.xi = x.data[np.flatnonzero(bad)[0]].copy()
            raise err
        return dt.mean(log_px + log_pz - log_q - log_target)

    def elbo(self, x_batch, rng):
        """Per-datum ELBO with one encoder draw each (tensor of shape (n,))."""
        x = dt.as_tensor(x_batch)
        u, _ = self.encoder.sample_base(x.shape[0], rng, x)
        z, logdet = self.encoder.inverse(u, x)
        log_q = self.encoder.base_logpdf(u, x) + logdet
        return self.decoder_logdensity(x, z) + self.prior.log_density(z) - log_q

    def sample(self, n, rng) -> np.ndarray:
        """Parameter draws: z from the prior flow, then x = mu(z) + sigma(z) * eps."""
        return self.sample_joint(n, rng)[2].data

    def posterior_mean(self, n, rng) -> np.ndarray:
        return self.sample(n, rng).mean(axis=0)


class VaeBaseline:
    """Gaussian encoder, N(0, I) latent prior and the same decoder family as VfModel."""

    def __init__(self, d, latent, encoder_hidden=32, encoder_depth=2, decoder_hidden=64,
                 decoder_depth=5, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d, self.k = d, latent
        sizes = [d] + [encoder_hidden] * encoder_depth
        self.enc_trunk = MLP(sizes, rng, "vae.encoder")
        self.enc_mu = dt.Linear(encoder_hidden, latent, rng, "vae.encoder.mu", zero=True)
        self.enc_sigma = dt.Linear(encoder_hidden, latent, rng, "vae.encoder.sigma", zero=True)
        self.enc_sigma.bias.data[:] = SOFTPLUS_INV_ONE
        self.decoder = GaussianDecoder(latent, d, decoder_hidden, decoder_depth, rng, "vae.decoder")

    def params(self):
        return (self.enc_trunk.params() + self.enc_mu.params() + self.enc_sigma.params()
                + self.decoder.params())

    def encode(self, x):
        h = dt.tanh(self.enc_trunk(dt.as_tensor(x)))
        return self.enc_mu(h), dt.softplus(self.enc_sigma(h)) + SIGMA_FLOOR

    @staticmethod
    def kl_term(mu, sigma):
        """KL(N(mu, sigma^2) || N(0, I)) per row."""
        return dt.sum_(dt.square(mu) + dt.square(sigma) - 1.0 - dt.log(dt.square(sigma)),
                       axis=-1) * 0.5

    def elbo(self, x_batch, rng):
        x = dt.as_tensor(x_batch)
        mu, sigma = self.encode(x)
        eps = rng.standard_normal(mu.shape)
        z = mu + sigma * dt.Tensor(eps)
        dmu, dsigma = self.decoder(z)
        return diag_normal_logpdf(x, dmu, dsigma) - self.kl_term(mu, sigma)

    def loss(self, x_batch, rng):
        return dt.neg(dt.mean(self.elbo(x_batch, rng)))

    def unnorm_loss(self, target, n, rng):
        """The VF target objective with a N(0, I) latent and a Gaussian encoder."""
        z = dt.Tensor(rng.standard_normal((n, self.k)))
        log_pz = dt.sum_(dt.square(z), axis=-1) * -0.5 - 0.5 * self.k * LOG_2PI
        mu, sigma = self.decoder(z)
        x = mu + sigma * dt.Tensor(rng.standard_normal((n, self.d)))
        log_px = diag_normal_logpdf(x, mu, sigma)
        e_mu, e_sigma = self.encode(x)
        log_q = diag_normal_logpdf(z, e_mu, e_sigma)
        log_target = target(x)
        if not np.all(np.isfinite(log_target.data)):
            raise NumericError("target log-density is not finite")
        return dt.mean(log_px + log_pz - log_q - log_target)

    def sample(self, n, rng) -> np.ndarray:
        z = rng.standard_normal((n, self.k))
        mu, sigma = self.decoder(z)
        return mu.data + sigma.data * rng.standard_normal((n, self.d))


def train_on_target(model: VfModel, target, steps: int, batch: int, optimizer, rng,
                    callback=None) -> list:
    """Minimize ``unnorm_loss`` for ``steps`` updates; returns the per-step losses."""
    params = model.params()
    losses = []
    for step in range(steps):
        with dt.Tape():
            loss = model.unnorm_loss(target, batch, rng)
            dt.backward(loss, params)
        optimizer.step()
        losses.append(loss.item())
        if callback is not None:
            callback(step, losses[-1])
    return losses


def train_on_data(model, data: np.ndarray, epochs: int, batch: int, optimizer, rng) -> list:
    """Maximize the mean ELBO of ``data`` by minibatch Adam; returns per-epoch mean losses."""
    params = model.params()
    history = []
    n = data.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            xb = data[order[start:start + batch]]
            with dt.Tape():
                loss = dt.neg(dt.mean(model.elbo(xb, rng)))
                dt.backward(loss, params)
            optimizer.step()
            total += loss.item() * len(xb)
        history.append(total / n)
    return history


def mean_elbo(model, data: np.ndarray, rng, repeats: int = 1) -> float:
    vals = [model.elbo(data, rng).data.mean() for _ in range(repeats)]
    return float(np.mean(vals))


__all__ = ["VfConfig", "VfModel", "VaeBaseline", "GaussianDecoder", "train_on_target",
           "train_on_data", "mean_elbo"]
