"""Karhunen-Loeve expansions of Gaussian random fields with closed-form eigenpairs.

Three geometries are supported, each with covariance sigma^2 (-Laplace + tau^2)^(-ell):

* ``interval-neumann-1d``: cosine modes on [0, 1], nodes at i/(n-1).
* ``square-neumann-2d``: tensor cosine modes on [0, 1]^2, nodes at i/(n-1).
* ``square-periodic-2d``: paired cosine/sine Fourier modes on the torus, nodes at i/n.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import difftensor as dt
from .errors import ConfigError, ShapeError

GEOMETRIES = ("interval-neumann-1d", "square-neumann-2d", "square-periodic-2d")
GRID_MAGIC = b"VFGRID1"


@dataclass(frozen=True)
class GrfSpec:
    sigma: float
    tau: float
    ell: float
    geometry: str
    d: int
    grid: int

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"unsupported geometry {self.geometry!r}")
        if not (self.sigma > 0 and self.tau > 0 and self.ell > 0):
            raise ConfigError("sigma, tau and ell must be positive")
        if self.d < 1:
            raise ConfigError("d must be at least 1")
        if self.d > available_modes(self.geometry, self.grid):
            raise ConfigError(f"{self.d} modes requested but the {self.grid}-point grid "
                              f"resolves only {available_modes(self.geometry, self.grid)}")

    def with_d(self, d: int) -> "GrfSpec":
        return GrfSpec(self.sigma, self.tau, self.ell, self.geometry, d, self.grid)

    @property
    def shape(self) -> tuple:
        return (self.grid,) if self.geometry == "interval-neumann-1d" else (self.grid, self.grid)


def available_modes(geometry: str, grid: int) -> int:
    """Modes that stay exactly orthonormal under the grid quadrature."""
    if geometry == "interval-neumann-1d":
        return grid - 2
    if geometry == "square-neumann-2d":
        return (grid - 1) ** 2 - 1
    # wavevectors strictly below Nyquist on both axes, two coefficients each
    h = (grid - 1) // 2
    return ((2 * h + 1) ** 2 - 1)


def grid_points(geometry: str, grid: int) -> np.ndarray:
    if geometry == "square-periodic-2d":
        return np.arange(grid) / grid
    return np.linspace(0.0, 1.0, grid)


def quadrature_weights(geometry: str, grid: int) -> np.ndarray:
    """Weights w with sum(w * f) approximating the integral of f over the domain."""
    if geometry == "square-periodic-2d":
        return np.full((grid, grid), 1.0 / grid**2)
    w = np.full(grid, 1.0 / (grid - 1))
    w[[0, -1]] *= 0.5
    return w if geometry == "interval-neumann-1d" else np.outer(w, w)


def l2_norm(values: np.ndarray, geometry: str) -> float:
    """Discrete L2 norm matching the geometry's node layout (last axes are the grid)."""
    grid = values.shape[-1]
    w = quadrature_weights(geometry, grid)
    return float(np.sqrt(np.sum(w * values**2)))


def _mode_indices(geometry: str, d: int, grid: int) -> list:
    """Wavevector indices sorted by eigenvalue (largest first), lexicographic tie-break."""
    if geometry == "interval-neumann-1d":
        return [(k,) for k in range(1, d + 1)]
    if geometry == "square-neumann-2d":
        kmax = min(grid - 2, math.isqrt(2 * d) + 2)
        cand = [(a, b) for a in range(kmax + 1) for b in range(kmax + 1) if (a, b) != (0, 0)]
        n_needed = d
    else:
        kmax = min((grid - 1) // 2, math.isqrt(2 * d) + 2)
        cand = [(a, b) for a in range(-kmax, kmax + 1) for b in range(0, kmax + 1)
                if b > 0 or a > 0]
        n_needed = (d + 1) // 2
    cand.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k))
    return cand[:n_needed]


@dataclass(frozen=True, eq=False)
class KlBasis:
    """Truncated KL basis evaluated on the solver grid.

    ``modes`` has shape ``(d, *grid_shape)``; row j holds the j-th eigenfunction.
    """

    spec: GrfSpec
    eigenvalues: np.ndarray
    modes: np.ndarray
    indices: tuple
    mean: np.ndarray = field(default=None)

    @property
    def d(self) -> int:
        return self.eigenvalues.size

    @property
    def grid_shape(self) -> tuple:
        return self.modes.shape[1:]

    def scaled_modes(self) -> np.ndarray:
        """sqrt(lambda_j) psi_j flattened to shape (d, n_grid)."""
        return (np.sqrt(self.eigenvalues)[:, None] * self.modes.reshape(self.d, -1))

    def truncate(self, d: int) -> "KlBasis":
        if d > self.d:
            raise ConfigError(f"cannot truncate a {self.d}-mode basis to {d}")
        return KlBasis(self.spec.with_d(d), self.eigenvalues[:d], self.modes[:d],
                       self.indices[:d], self.mean)


def _eigenvalue(spec: GrfSpec, k) -> float:
    k2 = sum(c * c for c in k)
    scale = 4 * math.pi**2 if spec.geometry == "square-periodic-2d" else math.pi**2
    return spec.sigma**2 * (scale * k2 + spec.tau**2) ** (-spec.ell)


def build_basis(spec: GrfSpec, mean: np.ndarray | None = None) -> KlBasis:
    x = grid_points(spec.geometry, spec.grid)
    ks = _mode_indices(spec.geometry, spec.d, spec.grid)
    eig, modes, labels = [], [], []
    if spec.geometry == "interval-neumann-1d":
        for (k,) in ks:
            eig.append(_eigenvalue(spec, (k,)))
            modes.append(math.sqrt(2) * np.cos(k * math.pi * x))
            labels.append((k,))
    elif spec.geometry == "square-neumann-2d":
        for k1, k2 in ks:
            c1 = np.cos(math.pi * k1 * x)
            c2 = np.cos(math.pi * k2 * x)
            if k2 == 0:
                mode = math.sqrt(2) * np.broadcast_to(c1[:, None], (x.size, x.size))
            elif k1 == 0:
                mode = math.sqrt(2) * np.broadcast_to(c2[None, :], (x.size, x.size))
            else:
                mode = 2.0 * np.outer(c1, c2)
            eig.append(_eigenvalue(spec, (k1, k2)))
            modes.append(np.array(mode))
            labels.append((k1, k2))
    else:
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        for kx, ky in ks:
            phase = 2 * math.pi * (kx * x1 + ky * x2)
            lam = _eigenvalue(spec, (kx, ky))
            for part, fn in (("c", np.cos), ("s", np.sin)):
                eig.append(lam)
                modes.append(math.sqrt(2) * fn(phase))
                labels.append((kx, ky, part))
        eig, modes, labels = eig[:spec.d], modes[:spec.d], labels[:spec.d]
    modes = np.stack(modes)
    if mean is None:
        mean = np.zeros(modes.shape[1:])
    elif mean.shape != modes.shape[1:]:
        raise ShapeError(f"mean field shape {mean.shape} does not match grid {modes.shape[1:]}")
    return KlBasis(spec, np.asarray(eig), modes, tuple(labels), np.asarray(mean, dtype=float))


def synthesize(basis: KlBasis, xi) -> np.ndarray:
    """Field m = mean + sum_j sqrt(lambda_j) xi_j psi_j; accepts a single xi or a batch."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape[-1] != basis.d:
        raise ShapeError(f"expected {basis.d} coefficients, got {xi.shape[-1]}")
    flat = xi @ basis.scaled_modes()
    return flat.reshape(xi.shape[:-1] + basis.grid_shape) + basis.mean


def synthesize_tensor(basis: KlBasis, xi: dt.Tensor) -> dt.Tensor:
    """Differentiable batch synthesis: (n, d) tensor to (n, *grid) tensor."""
    if xi.shape[-1] != basis.d:
        raise ShapeError(f"expected {basis.d} coefficients, got {xi.shape[-1]}")
    flat = dt.matmul(xi, dt.Tensor(basis.scaled_modes()))
    out = dt.reshape(flat, xi.shape[:-1] + basis.grid_shape)
    if np.any(basis.mean):
        out = out + dt.Tensor(basis.mean)
    return out


def pointwise_variance(basis: KlBasis) -> np.ndarray:
    """sum_j lambda_j psi_j(x)^2, the field variance under standard-normal coefficients."""
    return np.tensordot(basis.eigenvalues, basis.modes**2, axes=1)


def make_reference(basis256: KlBasis, seed: int):
    """Reference field from U[-10, 10] coefficients on all modes of ``basis256``."""
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-10.0, 10.0, size=basis256.d)
    return synthesize(basis256, xi), xi


def encode_grid(values: np.ndarray) -> bytes:
    arr = np.asarray(values, dtype="<f8")
    return b"".join([GRID_MAGIC, struct.pack("<I", arr.ndim),
                     struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()])


def _decode_one(blob: bytes, pos: int):
    if blob[pos:pos + len(GRID_MAGIC)] != GRID_MAGIC:
        raise ConfigError("not a VFGRID1 record")
    pos += len(GRID_MAGIC)
    (rank,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    dims = struct.unpack_from(f"<{rank}Q", blob, pos)
    pos += 8 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(blob) - pos < 8 * count:
        raise ConfigError("VFGRID1 payload shorter than its dimensions")
    values = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims).copy()
    return values, pos + 8 * count


def decode_grid(blob: bytes) -> np.ndarray:
    values, end = _decode_one(blob, 0)
    if end != len(blob):
        raise ConfigError("VFGRID1 payload length does not match its dimensions")
    return values


def decode_grid_sequence(blob: bytes) -> list:
    """All records of a concatenated VFGRID1 stream, in order."""
    out, pos = [], 0
    while pos < len(blob):
        values, pos = _decode_one(blob, pos)
        out.append(values)
    return out


def save_grid(path, values) -> None:
    Path(path).write_bytes(encode_grid(values))


def load_grid(path) -> np.ndarray:
    return decode_grid(Path(path).read_bytes())
