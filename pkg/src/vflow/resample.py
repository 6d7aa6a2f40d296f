"""Linear cubic-spline resampling operators between regular grids.

Each operator is a dense matrix, so applying it to a tensor keeps gradients exact.
"""
from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline


def spline_matrix(src_x: np.ndarray, dst_x: np.ndarray, periodic: bool = False) -> np.ndarray:
    """Matrix S with S @ f(src_x) ~= f(dst_x) by cubic-spline interpolation."""
    n = src_x.size
    eye = np.eye(n)
    if periodic:
        knots = np.append(src_x, 1.0)
        values = np.vstack([eye, eye[:1]])
        spline = CubicSpline(knots, values, axis=0, bc_type="periodic")
        return spline(np.mod(dst_x, 1.0))
    spline = CubicSpline(src_x, eye, axis=0, bc_type="not-a-knot")
    return spline(dst_x)


def node_coordinates(n: int, periodic: bool) -> np.ndarray:
    return np.arange(n) / n if periodic else np.linspace(0.0, 1.0, n)


def grid_resampler(n_src: int, n_dst: int, periodic: bool) -> np.ndarray:
    if n_src == n_dst:
        return np.eye(n_src)
    return spline_matrix(node_coordinates(n_src, periodic), node_coordinates(n_dst, periodic),
                         periodic)


def resample(values: np.ndarray, matrix: np.ndarray, ndim: int) -> np.ndarray:
    """Apply a 1D resampling matrix along each of the last ``ndim`` axes."""
    out = np.asarray(values, dtype=np.float64)
    for axis in range(-ndim, 0):
        out = np.moveaxis(np.tensordot(out, matrix, axes=([axis], [1])), -1, axis)
    return out


def point_matrix(n_src: int, points: np.ndarray, periodic: bool) -> np.ndarray:
    """Rows evaluate a flattened (n_src,)*ndim field at ``points`` (shape (m, ndim))."""
    x = node_coordinates(n_src, periodic)
    points = np.atleast_2d(points)
    per_axis = [spline_matrix(x, points[:, a], periodic) for a in range(points.shape[1])]
    rows = per_axis[0]
    for extra in per_axis[1:]:
        rows = np.einsum("mi,mj->mij", rows, extra).reshape(len(points), -1)
    return rows
