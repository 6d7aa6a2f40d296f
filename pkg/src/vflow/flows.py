"""Affine coupling flows, unconditional or conditioned on an external vector.

Direction convention: ``forward`` maps a latent point z to the base space v and
returns log|det dv/dz|; sampling draws v from the base and runs ``inverse``.
"""
from __future__ import annotations

import math

import numpy as np

from . import difftensor as dt
from .difftensor.nn import MLP

LOG_2PI = math.log(2 * math.pi)
SCALE_CLAMP = 5.0
SIGMA_FLOOR = 1e-4

# the three ways to split four coordinate groups into two pairs
_FOUR_GROUP_SPLITS = ((0, 2), (0, 1), (0, 3))


def coupling_masks(k: int, n_layers: int, groups: int = 4) -> list:
    """Passthrough index sets, one per layer.

    Coordinate i belongs to group i mod G with G = min(groups, k). Layers come in
    pairs that use complementary halves, and the split of groups rotates from one
    pair to the next so that every coordinate is mixed with every other group.
    """
    g = min(groups, k)
    member = np.arange(k) % g
    masks = []
    for layer in range(n_layers):
        pair = layer // 2
        if g == 4:
            chosen = set(_FOUR_GROUP_SPLITS[pair % 3])
        elif g > 1:
            chosen = {pair % g}
        else:
            chosen = set()
        if layer % 2:
            chosen = set(range(g)) - chosen
        masks.append(np.flatnonzero(np.isin(member, sorted(chosen))))
    return masks


class CouplingLayer:
    """y_A = v_A, y_B = v_B * exp(s) + t with s, t functions of (v_A, cond)."""

    def __init__(self, k, passthrough, cond_dim=0, hidden=32, depth=2, rng=None, name="coupling",
                 clamp=SCALE_CLAMP):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.k = k
        self.a_idx = np.asarray(passthrough, dtype=int)
        self.b_idx = np.setdiff1d(np.arange(k), self.a_idx)
        self.perm_inv = np.argsort(np.concatenate([self.a_idx, self.b_idx]))
        self.cond_dim = cond_dim
        self.clamp = clamp
        n_in = self.a_idx.size + cond_dim
        sizes = [n_in] + [hidden] * depth + [self.b_idx.size]
        self.s_net = MLP(sizes, rng, f"{name}.s", zero_last=True)
        self.t_net = MLP(sizes, rng, f"{name}.t", zero_last=True)

    def params(self):
        return self.s_net.params() + self.t_net.params()

    def _scale_shift(self, va, cond):
        h = va if cond is None else dt.concat([va, cond], axis=-1)
        s_raw = self.s_net(h)
        s = dt.tanh(s_raw * (1.0 / self.clamp)) * self.clamp
        return s, self.t_net(h)

    def _split(self, v):
        return v[..., self.a_idx], v[..., self.b_idx]

    def _join(self, a, b):
        return dt.concat([a, b], axis=-1)[..., self.perm_inv]

    def forward(self, v, cond=None):
        va, vb = self._split(dt.as_tensor(v))
        s, t = self._scale_shift(va, cond)
        out = self._join(va, vb * dt.exp(s) + t)
        return out, dt.sum_(s, axis=-1)

    def inverse(self, y, cond=None):
        """Undo ``forward``; also returns the forward log-determinant at the result."""
        ya, yb = self._split(dt.as_tensor(y))
        s, t = self._scale_shift(ya, cond)
        out = self._join(ya, (yb - t) * dt.exp(dt.neg(s)))
        return out, dt.sum_(s, axis=-1)


def standard_normal_logpdf(v):
    k = v.shape[-1]
    return dt.sum_(dt.square(v), axis=-1) * -0.5 - 0.5 * k * LOG_2PI


def diag_normal_logpdf(v, mu, sigma):
    z = (v - mu) / sigma
    k = v.shape[-1]
    return (dt.sum_(dt.square(z), axis=-1) * -0.5 - dt.sum_(dt.log(sigma), axis=-1)
            - 0.5 * k * LOG_2PI)


class FlowStack:
    """Composition of coupling layers with a Gaussian base.

    Without a conditioner the base is N(0, I). With ``cond_dim > 0`` the base is
    N(mu(x), diag sigma(x)^2), both produced by small networks of the conditioner x,
    and every coupling subnet also sees x.
    """

    def __init__(self, k, n_layers, cond_dim=0, hidden=32, depth=2, groups=4, rng=None,
                 name="flow"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.k = k
        self.cond_dim = cond_dim
        self.layers = [CouplingLayer(k, mask, cond_dim, hidden, depth, rng, f"{name}.{i}")
                       for i, mask in enumerate(coupling_masks(k, n_layers, groups))]
        self.conditional = cond_dim > 0
        if self.conditional:
            sizes = [cond_dim] + [hidden] * depth + [k]
            self.mu_net = MLP(sizes, rng, f"{name}.base_mu", zero_last=True)
            self.sigma_net = MLP(sizes, rng, f"{name}.base_sigma", zero_last=True)
            # softplus(0.5413) + floor ~= 1, so the base starts near N(0, I)
            self.sigma_net.layers[-1].bias.data[:] = 0.5413

    def params(self):
        ps = [p for layer in self.layers for p in layer.params()]
        if self.conditional:
            ps += self.mu_net.params() + self.sigma_net.params()
        return ps

    def _check_cond(self, cond):
        if self.conditional and cond is None:
            raise ValueError("conditional flow needs a conditioner")
        return None if cond is None else dt.as_tensor(cond)

    def base_params(self, cond):
        """Mean and std of the base Gaussian (None for the standard base)."""
        if not self.conditional:
            return None, None
        mu = self.mu_net(cond)
        sigma = dt.softplus(self.sigma_net(cond)) + SIGMA_FLOOR
        return mu, sigma

    def base_logpdf(self, v, cond=None):
        cond = self._check_cond(cond)
        if not self.conditional:
            return standard_normal_logpdf(v)
        mu, sigma = self.base_params(cond)
        return diag_normal_logpdf(v, mu, sigma)

    def forward(self, z, cond=None):
        cond = self._check_cond(cond)
        v = dt.as_tensor(z)
        total = None
        for layer in self.layers:
            v, ld = layer.forward(v, cond)
            total = ld if total is None else total + ld
        if total is None:
            total = dt.Tensor(np.zeros(v.shape[:-1]))
        return v, total

    def inverse(self, v, cond=None):
        cond = self._check_cond(cond)
        z = dt.as_tensor(v)
        total = None
        for layer in reversed(self.layers):
            z, ld = layer.inverse(z, cond)
            total = ld if total is None else total + ld
        if total is None:
            total = dt.Tensor(np.zeros(z.shape[:-1]))
        return z, total

    def log_density(self, z, cond=None):
        """log p(z) = log base(f(z)) + log|det df/dz|."""
        v, logdet = self.forward(z, cond)
        return self.base_logpdf(v, cond) + logdet

    def sample_base(self, n, rng, cond=None):
        """Reparameterized base draws: returns (v, eps) with v = mu + sigma * eps."""
        cond = self._check_cond(cond)
        eps = rng.standard_normal((n, self.k))
        if not self.conditional:
            return dt.Tensor(eps), eps
        mu, sigma = self.base_params(cond)
        return mu + sigma * dt.Tensor(eps), eps

    def sample(self, n, rng, cond=None):
        """Draw n latent points; returns (z, log p(z))."""
        v, _ = self.sample_base(n, rng, cond)
        z, logdet = self.inverse(v, cond)
        return z, self.base_logpdf(v, cond) + logdet


def log_density(stack: FlowStack, z, cond=None):
    return stack.log_density(z, cond)


def sample(stack: FlowStack, n, rng, cond=None):
    return stack.sample(n, rng, cond)
