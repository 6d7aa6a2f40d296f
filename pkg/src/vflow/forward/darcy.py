"""Finite-difference / finite-volume Darcy solvers with harmonic-mean face coefficients.

Nodes include the boundary: x_i = i/(n-1). Pressure is pinned to zero on the
boundary and only interior nodes are unknowns.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import solve_banded

from ..errors import NumericError, ShapeError, SolverError

log = logging.getLogger(__name__)


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def _permeability(m):
    with np.errstate(over="ignore", invalid="ignore"):
        k = np.exp(m)
    if not np.all(np.isfinite(k)) or np.any(k <= 0):
        raise NumericError("permeability exp(m) is not finite and positive")
    return k


def darcy1d_source(n: int) -> np.ndarray:
    return np.ones(n)


def solve_darcy1d(m, f=None) -> np.ndarray:
    """Solve -(e^m p')' = f on [0, 1] with p(0) = p(1) = 0.

    ``m`` may be a single field of shape (n,) or a batch (b, n); ``f`` defaults to 1.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 2:
        return np.stack([solve_darcy1d(row, f) for row in m])
    if m.ndim != 1 or m.size < 3:
        raise ShapeError(f"expected a 1D field with at least 3 nodes, got {m.shape}")
    n = m.size
    h = 1.0 / (n - 1)
    f = darcy1d_source(n) if f is None else np.broadcast_to(np.asarray(f, float), (n,))
    k = _permeability(m)
    face = _harmonic(k[:-1], k[1:])          # face i+1/2 for i = 0..n-2
    west, east = face[:-1], face[1:]         # faces around interior nodes 1..n-2
    ab = np.zeros((3, n - 2))
    ab[0, 1:] = -east[:-1]
    ab[1] = west + east
    ab[2, :-1] = -west[1:]
    p = np.zeros(n)
    p[1:-1] = solve_banded((1, 1), ab, h * h * f[1:-1])
    if not np.all(np.isfinite(p)):
        raise NumericError("1D Darcy solve produced non-finite pressure")
    return p


def darcy2d_source(n: int) -> np.ndarray:
    """Three-level source that depends only on the second coordinate."""
    x2 = np.linspace(0.0, 1.0, n)
    level = np.where(x2 <= 4 / 6, 1000.0, np.where(x2 <= 5 / 6, 2000.0, 3000.0))
    return np.broadcast_to(level[None, :], (n, n)).copy()


class _Operator2d:
    """Matrix-free 5-point operator on the interior nodes, batched over a leading axis."""

    def __init__(self, m):
        k = _permeability(m)
        self.tx = _harmonic(k[:, :-1, :], k[:, 1:, :])[:, :, 1:-1]   # faces along axis 1
        self.ty = _harmonic(k[:, :, :-1], k[:, :, 1:])[:, 1:-1, :]   # faces along axis 2
        self.diag = (self.tx[:, :-1] + self.tx[:, 1:] + self.ty[:, :, :-1] + self.ty[:, :, 1:])

    def __call__(self, p):
        out = self.diag * p
        out[:, 1:] -= self.tx[:, 1:-1] * p[:, :-1]
        out[:, :-1] -= self.tx[:, 1:-1] * p[:, 1:]
        out[:, :, 1:] -= self.ty[:, :, 1:-1] * p[:, :, :-1]
        out[:, :, :-1] -= self.ty[:, :, 1:-1] * p[:, :, 1:]
        return out


def _pcg(op, rhs, tol, max_iter):
    """Jacobi-preconditioned conjugate gradients, one independent system per batch row."""
    inv_diag = 1.0 / op.diag
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = inv_diag * r
    p = z.copy()
    rz = np.einsum("bij,bij->b", r, z)
    bnorm = np.sqrt(np.einsum("bij,bij->b", rhs, rhs))
    target = tol * np.where(bnorm > 0, bnorm, 1.0)
    active = np.sqrt(np.einsum("bij,bij->b", r, r)) > target
    it = 0
    while np.any(active):
        if it >= max_iter:
            raise SolverError(f"CG did not reach relative residual {tol} in {max_iter} iterations")
        ap = op(p)
        pap = np.einsum("bij,bij->b", p, ap)
        alpha = np.where(active, rz / np.where(active, pap, 1.0), 0.0)
        x += alpha[:, None, None] * p
        r -= alpha[:, None, None] * ap
        z = inv_diag * r
        rz_new = np.einsum("bij,bij->b", r, z)
        beta = np.where(active, rz_new / np.where(active, rz, 1.0), 0.0)
        p = z + beta[:, None, None] * p
        rz = rz_new
        active = np.sqrt(np.einsum("bij,bij->b", r, r)) > target
        it += 1
    return x, it


def solve_darcy2d(m, f=None, tol: float = 1e-10) -> np.ndarray:
    """Solve -div(e^m grad p) = f on the unit square with p = 0 on the boundary.

    Works on a single (n, n) field or a batch (b, n, n). ``f`` defaults to the
    three-level source.
    """
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 2
    if single:
        m = m[None]
    if m.ndim != 3 or m.shape[1] != m.shape[2] or m.shape[1] < 3:
        raise ShapeError(f"expected square 2D field(s), got {m.shape}")
    n = m.shape[1]
    h = 1.0 / (n - 1)
    f = darcy2d_source(n) if f is None else np.asarray(f, dtype=np.float64)
    rhs = np.broadcast_to(h * h * f[..., 1:-1, 1:-1], (m.shape[0], n - 2, n - 2)).copy()
    op = _Operator2d(m)
    interior, iters = _pcg(op, rhs, tol, max_iter=10 * (n - 2) ** 2)
    log.debug("2D Darcy CG converged in %d iterations", iters)
    p = np.zeros_like(m)
    p[:, 1:-1, 1:-1] = interior
    if not np.all(np.isfinite(p)):
        raise NumericError("2D Darcy solve produced non-finite pressure")
    return p[0] if single else p
