"""Concrete inverse problems: geometry, prior basis, reference truth and noisy data."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .. import difftensor as dt
from .. import randfield as rf
from ..errors import ConfigError, ShapeError
from ..parallel import pmap
from ..resample import grid_resampler, node_coordinates, point_matrix, resample
from ..seeding import component_rng
from .darcy import solve_darcy1d, solve_darcy2d
from .ns import solve_ns2d
from .observation import Likelihood, interior_lattice, misfit, noisy_observation, observe

# kind -> (sigma, tau, ell, geometry, default grid, observations per axis)
PROBLEM_TABLE = {
    "darcy1d": (2.0, 1.0, 2.0, "interval-neumann-1d", 1024, 31),
    "darcy2d": (1.0, 2.0, 3.0, "square-neumann-2d", 71, 6),
    "ns2d": (25.0, 2.0, 2.5, "square-periodic-2d", 128, 6),
}
REFERENCE_MODES = 256


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    d: int = 32
    noise_delta: float = 0.01
    grid: int | None = None
    seed: int = 0
    reference_modes: int = REFERENCE_MODES
    surrogate_grid: int | None = None

    def __post_init__(self):
        if self.kind not in PROBLEM_TABLE:
            raise ConfigError(f"unknown problem {self.kind!r}; choose from {sorted(PROBLEM_TABLE)}")
        if self.noise_delta < 0:
            raise ConfigError("noise_delta must be non-negative")
        if self.d > self.reference_modes:
            raise ConfigError("d cannot exceed the number of reference modes")

    @property
    def resolution(self) -> int:
        return self.grid or PROBLEM_TABLE[self.kind][4]

    @property
    def surrogate_resolution(self) -> int:
        return self.surrogate_grid or self.resolution

    def grf(self, d: int | None = None, grid: int | None = None) -> rf.GrfSpec:
        sigma, tau, ell, geometry, _, _ = PROBLEM_TABLE[self.kind]
        return rf.GrfSpec(sigma, tau, ell, geometry, d or self.d, grid or self.resolution)


class InverseProblem:
    """Runtime view of a ProblemSpec with cached basis, reference field and data."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.kind = spec.kind
        self.d = spec.d
        self.geometry = spec.grf().geometry
        _, _, _, _, _, per_axis = PROBLEM_TABLE[spec.kind]
        ndim = 1 if spec.kind == "darcy1d" else 2
        self.obs = interior_lattice(per_axis, spec.resolution, ndim, spec.kind == "ns2d")

    @cached_property
    def basis_ref(self) -> rf.KlBasis:
        return rf.build_basis(self.spec.grf(self.spec.reference_modes))

    @cached_property
    def basis(self) -> rf.KlBasis:
        return self.basis_ref.truncate(self.d)

    @cached_property
    def _reference(self):
        rng = component_rng(self.spec.seed, "reference")
        xi = rng.uniform(-10.0, 10.0, size=self.basis_ref.d)
        return rf.synthesize(self.basis_ref, xi), xi

    @property
    def m_ref(self) -> np.ndarray:
        return self._reference[0]

    @property
    def xi_ref(self) -> np.ndarray:
        return self._reference[1]

    @cached_property
    def clean_data(self) -> np.ndarray:
        return self.observe(self.solve(self.m_ref))

    @cached_property
    def lik(self) -> Likelihood:
        rng = component_rng(self.spec.seed, "noise")
        return noisy_observation(self.clean_data, self.spec.noise_delta, rng)

    @property
    def grid_shape(self) -> tuple:
        return self.basis.grid_shape

    @property
    def periodic(self) -> bool:
        return self.kind == "ns2d"

    @property
    def ndim(self) -> int:
        return len(self.grid_shape)

    @cached_property
    def surrogate_basis(self) -> rf.KlBasis:
        """The same KL modes evaluated on the surrogate grid."""
        if self.spec.surrogate_resolution == self.spec.resolution:
            return self.basis
        return rf.build_basis(self.spec.grf(grid=self.spec.surrogate_resolution))

    @cached_property
    def _to_surrogate_matrix(self) -> np.ndarray:
        return grid_resampler(self.spec.resolution, self.spec.surrogate_resolution, self.periodic)

    def to_surrogate_grid(self, u) -> np.ndarray:
        """Resample solver-grid states onto the surrogate grid (identity when they agree)."""
        if self.spec.surrogate_resolution == self.spec.resolution:
            return np.asarray(u, dtype=np.float64)
        return resample(u, self._to_surrogate_matrix, self.ndim)

    @cached_property
    def observation_points(self) -> np.ndarray:
        x = node_coordinates(self.spec.resolution, self.periodic)
        return np.array([[x[i] for i in loc] for loc in self.obs.locations])

    @cached_property
    def _surrogate_obs_matrix(self) -> np.ndarray:
        return point_matrix(self.spec.surrogate_resolution, self.observation_points,
                            self.periodic)

    def surrogate_observe(self, u):
        """Observations from surrogate-grid states of shape (batch, *grid)."""
        if self.spec.surrogate_resolution == self.spec.resolution:
            return self.observe(u)
        n = int(np.prod(u.shape[1:]))
        if isinstance(u, dt.Tensor):
            return dt.matmul(dt.reshape(u, (u.shape[0], n)), dt.Tensor(self._surrogate_obs_matrix.T))
        return np.asarray(u).reshape(len(u), n) @ self._surrogate_obs_matrix.T

    def field(self, xi) -> np.ndarray:
        return rf.synthesize(self.basis, xi)

    def solve(self, m) -> np.ndarray:
        if self.kind == "darcy1d":
            return solve_darcy1d(m)
        if self.kind == "darcy2d":
            return solve_darcy2d(m)
        return solve_ns2d(m)

    def state(self, xi) -> np.ndarray:
        return self.solve(self.field(xi))

    def observe(self, u):
        return observe(u, self.obs)

    def exact_states(self, xi) -> np.ndarray:
        """Exact solver states for a (n, d) batch, resampled onto the surrogate grid."""
        states = np.stack(pmap(self.state, np.atleast_2d(xi)))
        return self.to_surrogate_grid(states)

    def forward(self, xi) -> np.ndarray:
        """Exact parameter-to-observation map; batches over leading axes."""
        xi = np.asarray(xi, dtype=np.float64)
        if xi.ndim == 1:
            return self.observe(self.state(xi))
        flat = xi.reshape(-1, xi.shape[-1])
        out = np.stack(pmap(lambda x: self.observe(self.state(x)), flat))
        return out.reshape(xi.shape[:-1] + (self.obs.count,))

    def misfit(self, xi) -> np.ndarray:
        return misfit(self.forward(xi), self.lik)


@dataclass(eq=False)
class LinearGaussianProblem:
    """G(xi) = A xi with Gaussian noise and N(prior_mean, I) prior: closed-form posterior."""

    A: np.ndarray
    lik: Likelihood
    prior_mean: np.ndarray = field(default=None)

    def __post_init__(self):
        self.A = np.asarray(self.A, float)
        if self.A.shape[0] != np.shape(self.lik.y)[0]:
            raise ShapeError("A rows must match the data length")
        self.d = self.A.shape[1]
        if self.prior_mean is None:
            self.prior_mean = np.zeros(self.d)

    @classmethod
    def random(cls, d: int, m: int, noise_std: float, seed: int) -> "LinearGaussianProblem":
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(m, d))
        xi_true = rng.normal(size=d)
        y = A @ xi_true + noise_std * rng.normal(size=m)
        return cls(A, Likelihood(y, noise_std))

    def forward(self, xi):
        if isinstance(xi, dt.Tensor):
            return dt.matmul(xi, dt.Tensor(self.A.T))
        return np.asarray(xi) @ self.A.T

    def misfit(self, xi):
        return misfit(self.forward(xi), self.lik)

    def posterior(self, prior_mean=None):
        """Mean and covariance of the exact Gaussian posterior."""
        mu0 = self.prior_mean if prior_mean is None else np.asarray(prior_mean, float)
        w = self.lik.precision_sqrt() ** 2 * np.ones(self.A.shape[0])
        precision = self.A.T @ (w[:, None] * self.A) + np.eye(self.d)
        cov = np.linalg.inv(precision)
        mean = cov @ (self.A.T @ (w * self.lik.y) + mu0)
        return mean, 0.5 * (cov + cov.T)
