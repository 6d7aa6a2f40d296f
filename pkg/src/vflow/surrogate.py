"""Fourier neural operator surrogate mapping a coefficient field to the PDE state.

Tensors are channels-last: (batch, n, channels) in 1D and (batch, n, n, channels) in 2D.
Spectral weights are real parameters with a trailing (re, im) axis, so checkpoints
store the complex values interleaved.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import difftensor as dt
from . import randfield as rf
from .difftensor.nn import Linear
from .errors import ConfigError, NumericError, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FnoConfig:
    width: int = 64
    modes: int = 16
    layers: int = 4
    proj_hidden: int = 128
    coords: bool = True

    @classmethod
    def for_dim(cls, ndim: int, **overrides) -> "FnoConfig":
        base = cls() if ndim == 1 else cls(width=32, modes=12)
        return cls(**{**base.__dict__, **overrides})


class SpectralLayer:
    """Truncated spectral convolution plus a pointwise linear bypass."""

    def __init__(self, width, modes, ndim, rng, name):
        self.ndim, self.modes = ndim, modes
        bound = 1.0 / (width * width)
        blocks = 1 if ndim == 1 else 2    # 2D keeps low and high first-axis frequencies
        shape = (width, width) + (modes,) * ndim + (2,)
        self.weights = [dt.Param(rng.uniform(-bound, bound, size=shape), f"{name}.spectral{i}")
                        for i in range(blocks)]
        self.bypass = Linear(width, width, rng, f"{name}.bypass")

    def params(self):
        return self.weights + self.bypass.params()

    def spectral(self, x):
        m = self.modes
        if self.ndim == 1:
            n = x.shape[1]
            if m > n // 2:
                raise ShapeError(f"{m} modes exceed what a {n}-point grid resolves")
            spec = dt.swapaxes(dt.rfft(x, axes=(1,))[:, :m, :], 0, 1)          # (m, b, i)
            out = dt.swapaxes(dt.matmul(spec, self._mode_major(0)), 0, 1)      # (b, m, o)
            return dt.irfft(out, (n,), axes=(1,))
        n1, n2 = x.shape[1], x.shape[2]
        if 2 * m > n1 or m > n2 // 2:
            raise ShapeError(f"{m} modes exceed what a {n1}x{n2} grid resolves")
        spec = dt.rfft(x, axes=(1, 2))
        low = self._mix2d(spec[:, :m, :m, :], 0)
        high = self._mix2d(spec[:, n1 - m:, :m, :], 1)
        gap = dt.zeros((x.shape[0], n1 - 2 * m, m, low.shape[-1]), dtype=np.complex128)
        full = dt.concat([low, gap, high], axis=1)
        return dt.irfft(full, (n1, n2), axes=(1, 2))

    def _mode_major(self, i):
        """Complex weights arranged (modes..., in, out) for batched matmul."""
        w = dt.as_complex(self.weights[i])
        if self.ndim == 1:
            return dt.transpose(w, (2, 0, 1))
        return dt.transpose(w, (2, 3, 0, 1))

    def _mix2d(self, block, i):
        # block: (b, p, q, in) -> (p, q, b, in) @ (p, q, in, out) -> (b, p, q, out)
        moved = dt.transpose(block, (1, 2, 0, 3))
        return dt.transpose(dt.matmul(moved, self._mode_major(i)), (2, 0, 1, 3))

    def __call__(self, x, last=False):
        y = self.spectral(x) + self.bypass(x)
        return y if last else dt.gelu_tanh(y)


class FnoModel:
    """Lift -> spectral layers -> pointwise projection to one output channel.

    Fixed affine normalizations (``in_shift``, ``in_scale``, ``out_scale``) are set
    from the pre-training data and stored with the weights.
    """

    def __init__(self, grid_shape, config: FnoConfig | None = None, rng=None, periodic=False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.grid_shape = tuple(grid_shape)
        self.ndim = len(self.grid_shape)
        self.config = config or FnoConfig.for_dim(self.ndim)
        self.periodic = periodic
        c = self.config
        n_in = 1 + (self.ndim if c.coords else 0)
        self.lift = Linear(n_in, c.width, rng, "fno.lift")
        self.blocks = [SpectralLayer(c.width, c.modes, self.ndim, rng, f"fno.layer{i}")
                       for i in range(c.layers)]
        self.proj1 = Linear(c.width, c.proj_hidden, rng, "fno.proj1")
        self.proj2 = Linear(c.proj_hidden, 1, rng, "fno.proj2")
        self.norm = {k: dt.Param(v, f"fno.norm.{k}") for k, v in
                     (("in_shift", 0.0), ("in_scale", 1.0), ("out_scale", 1.0))}
        self._coords = self._coordinate_channels() if c.coords else None

    def _coordinate_channels(self):
        axes = [np.arange(n) / n if self.periodic else np.linspace(0, 1, n)
                for n in self.grid_shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def params(self):
        ps = self.lift.params()
        for b in self.blocks:
            ps += b.params()
        return ps + self.proj1.params() + self.proj2.params()

    def state(self):
        """Everything a checkpoint must hold: trainable weights and normalizations."""
        return self.params() + list(self.norm.values())

    def set_normalization(self, m, u):
        self.norm["in_shift"].data[...] = float(np.mean(m))
        self.norm["in_scale"].data[...] = float(np.std(m)) or 1.0
        self.norm["out_scale"].data[...] = float(np.sqrt(np.mean(np.square(u)))) or 1.0

    def __call__(self, m):
        """Predict states for fields of shape (batch, *grid) (array or tensor)."""
        m = dt.as_tensor(m)
        if tuple(m.shape[1:]) != self.grid_shape:
            raise ShapeError(f"field grid {m.shape[1:]} does not match model grid {self.grid_shape}")
        shift = float(self.norm["in_shift"].data)
        scale = float(self.norm["in_scale"].data)
        h = dt.reshape((m - shift) * (1.0 / scale), m.shape + (1,))
        if self._coords is not None:
            coords = np.broadcast_to(self._coords, (m.shape[0],) + self._coords.shape)
            h = dt.concat([h, dt.Tensor(coords)], axis=-1)
        h = self.lift(h)
        for i, block in enumerate(self.blocks):
            h = block(h, last=i == len(self.blocks) - 1)
        h = self.proj2(dt.gelu_tanh(self.proj1(h)))
        out = dt.reshape(h, m.shape)
        return out * float(self.norm["out_scale"].data)

    def predict(self, m, batch=64) -> np.ndarray:
        m = np.asarray(m, dtype=np.float64)
        single = m.shape == self.grid_shape
        if single:
            m = m[None]
        out = np.concatenate([self(m[i:i + batch]).data for i in range(0, len(m), batch)])
        return out[0] if single else out


def relative_l2_loss(pred, truth):
    """Mean over the batch of |pred - truth| / |truth| (plain grid norms)."""
    axes = tuple(range(1, truth.ndim))
    true_norm = np.sqrt(np.sum(np.square(truth), axis=axes))
    if np.any(true_norm == 0):
        raise NumericError("relative loss undefined for an all-zero target")
    diff = pred - dt.Tensor(truth)
    num = dt.sqrt(dt.sum_(dt.square(diff), axis=axes) + 1e-300)
    return dt.mean(num * dt.Tensor(1.0 / true_norm))


def _fit(model: FnoModel, m, u, epochs, batch, lr, halve_every, rng, label):
    if len(m) == 0:
        raise ConfigError("cannot train on an empty dataset")
    params = model.params()
    opt = dt.Adam(params, lr=lr)
    sched = dt.StepDecay(opt, every=halve_every, gamma=0.5)
    history = []
    n = len(m)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            with dt.Tape():
                loss = relative_l2_loss(model(m[idx]), u[idx])
                if not np.isfinite(loss.item()):
                    raise NumericError(f"{label}: non-finite loss at epoch {epoch}")
                dt.backward(loss, params)
            opt.step()
            total += loss.item() * len(idx)
        sched.step()
        history.append(total / n)
        log.debug("%s epoch %d loss %.4e", label, epoch, history[-1])
    return history


def fno_pretrain(model: FnoModel, m, u, epochs=1000, batch=25, lr=1e-3, halve_every=50,
                 rng=None) -> list:
    """Fit on prior samples; sets the normalization from this data first."""
    m, u = np.asarray(m, float), np.asarray(u, float)
    model.set_normalization(m, u)
    rng = rng if rng is not None else np.random.default_rng(0)
    return _fit(model, m, u, epochs, batch, lr, halve_every, rng, "pretrain")


def fno_finetune(model: FnoModel, m, u, epochs=100, batch=25, lr=1e-3, halve_every=25,
                 rng=None) -> list:
    """Continue training on a fresh dataset only (normalization stays fixed)."""
    m, u = np.asarray(m, float), np.asarray(u, float)
    rng = rng if rng is not None else np.random.default_rng(0)
    return _fit(model, m, u, epochs, batch, lr, halve_every, rng, "finetune")


def relative_state_error(pred, truth, geometry) -> np.ndarray:
    """Per-sample relative L2 error using the geometry's grid quadrature."""
    w = rf.quadrature_weights(geometry, truth.shape[-1])
    axes = tuple(range(1, truth.ndim))
    num = np.sqrt(np.sum(w * np.square(pred - truth), axis=axes))
    den = np.sqrt(np.sum(w * np.square(truth), axis=axes))
    return num / den


def surrogate_fitting_error(predict_states, exact_states, xi_center, geometry, n=100, rng=None):
    """Mean relative state error of the surrogate near ``xi_center``.

    Both callables map a (n, d) coefficient batch to states on the same grid; the
    test points are xi_center + N(0, I).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    xi_center = np.asarray(xi_center, float)
    xi = xi_center[None, :] + rng.standard_normal((n, xi_center.shape[0]))
    truth = np.asarray(exact_states(xi))
    pred = np.asarray(predict_states(xi))
    return float(np.mean(relative_state_error(pred, truth, geometry)))


class SurrogateForward:
    """xi -> observations through field synthesis, the FNO and an observation map.

    ``basis`` must be evaluated on the FNO grid; ``observe`` maps (batch, *grid)
    states to (batch, m) observations and accepts arrays and tensors.
    """

    def __init__(self, model: FnoModel, basis: rf.KlBasis, observe):
        self.model, self.basis, self.observe = model, basis, observe

    @classmethod
    def for_problem(cls, model: FnoModel, problem) -> "SurrogateForward":
        return cls(model, problem.surrogate_basis, problem.surrogate_observe)

    def states(self, xi) -> np.ndarray:
        return self.model.predict(rf.synthesize(self.basis, np.atleast_2d(xi)))

    def __call__(self, xi):
        if isinstance(xi, dt.Tensor):
            single = xi.ndim == 1
            x2 = dt.reshape(xi, (1, xi.shape[0])) if single else xi
            out = self.observe(self.model(rf.synthesize_tensor(self.basis, x2)))
            return out[0] if single else out
        xi = np.asarray(xi, float)
        single = xi.ndim == 1
        out = self.observe(self.states(xi))
        return out[0] if single else out
