import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vflow import randfield as rf
from vflow.bench import (Cell, cells, mode_centers, mode_coverage, mode_separation,
                         rosenbrock_grad, rosenbrock_logp, rosenbrock_logp_tensor, run_matrix,
                         summarize)
from vflow.bench.rosenbrock import CLAMP, DATA, DIM, banana_forward
from vflow import difftensor as dt
from vflow.errors import ConfigError, NumericError
from vflow.metrics import coefficient_inversion_error, inversion_error


def coupled_point(x1, x2):
    """Fill coordinates 3..100 so the coupling residual vanishes."""
    s = -(x1 + x2) / (DIM - 3)
    return np.concatenate([[x1, x2], np.full(DIM - 2, s)])


# Rosenbrock target

def test_logp_at_origin():
    assert rosenbrock_logp(np.zeros(DIM)) == pytest.approx(-10.649668692484568, abs=1e-12)


def test_logp_rejects_wrong_width():
    with pytest.raises(ValueError):
        rosenbrock_logp(np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_zero_coupling_leaves_only_the_banana_misfit(x1, x2):
    xi = coupled_point(x1, x2)
    f = banana_forward(np.array(x1), np.array(x2))
    if not np.all(np.isfinite(f)):
        return
    assert rosenbrock_logp(xi) == pytest.approx(-0.5 * np.sum((f - DATA) ** 2), rel=1e-9,
                                                abs=1e-9)


def test_coupling_penalty_is_quadratic():
    xi = coupled_point(0.3, -0.4)
    base = rosenbrock_logp(xi)
    bumped = xi.copy()
    bumped[10] += 0.1
    # Moving one coupled coordinate shifts the total too, so build the residual directly.
    resid = bumped[2:] - bumped.sum()
    f = banana_forward(bumped[0], bumped[1])
    expect = -0.5 * np.sum((f - DATA) ** 2) - 0.5 * np.sum(resid ** 2)
    assert rosenbrock_logp(bumped) == pytest.approx(expect, rel=1e-12)
    assert rosenbrock_logp(bumped) < base


def test_tensor_path_matches_array_path():
    x = np.random.default_rng(0).normal(size=(5, DIM))
    np.testing.assert_allclose(rosenbrock_logp_tensor(dt.Tensor(x)).data, rosenbrock_logp(x),
                               rtol=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = 0.3 * rng.normal(size=DIM)
    g = rosenbrock_grad(x)[0]
    h = 1e-6
    for j in (0, 1, 2, 50, 99):
        e = np.zeros(DIM)
        e[j] = h
        fd = (rosenbrock_logp(x + e) - rosenbrock_logp(x - e)) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_singular_point_is_clamped(caplog):
    xi = coupled_point(1.0, 1.0)
    with caplog.at_level(logging.WARNING):
        assert rosenbrock_logp(xi) == CLAMP
    assert "clamping" in caplog.text


def test_modes_are_not_mirror_images():
    a = coupled_point(-0.03, -0.17)
    b = coupled_point(0.02, 0.175)
    assert abs(rosenbrock_logp(a) - rosenbrock_logp(-a)) > 1e-3
    assert abs(rosenbrock_logp(b) - rosenbrock_logp(-b)) > 1e-3


# mode scoring

def two_blobs(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal([0.3, 0.25], 0.1, size=(n, 2))
    b = rng.normal([-0.6, 0.5], 0.1, size=(n, 2))
    return np.vstack([a, b])


def test_centers_found_and_ordered():
    centers = mode_centers(two_blobs(), seed=0)
    np.testing.assert_allclose(centers, [[0.3, 0.25], [-0.6, 0.5]], atol=0.02)


def test_coverage_and_separation():
    xy = two_blobs()
    centers = np.array([[0.3, 0.25], [-0.6, 0.5]])
    cov = mode_coverage(xy, centers, 0.5)
    np.testing.assert_allclose(cov, [0.5, 0.5], atol=0.01)
    np.testing.assert_allclose(mode_separation(xy, centers), [0.5, 0.5])


def test_single_mode_sampler_covers_one_mode():
    xy = two_blobs()[:2000]
    cov = mode_coverage(xy, np.array([[0.3, 0.25], [-0.6, 0.5]]), 0.5)
    assert cov[0] > 0.99 and cov[1] == 0.0


# inversion error

@pytest.fixture(scope="module")
def basis():
    return rf.build_basis(rf.GrfSpec(2.0, 1.0, 2.0, "square-periodic-2d", 64, 32))


def test_perfect_recovery(basis):
    xi = np.random.default_rng(0).normal(size=64)
    assert inversion_error(xi, xi, basis) == 0.0


def test_zero_estimate_gives_one(basis):
    xi = np.random.default_rng(0).normal(size=64)
    assert inversion_error(np.zeros(64), xi, basis) == pytest.approx(1.0, abs=1e-12)


def test_sign_flip_invariance(basis):
    rng = np.random.default_rng(2)
    xi, mu = rng.normal(size=64), rng.normal(size=32)
    assert inversion_error(mu, xi, basis) == pytest.approx(inversion_error(-mu, -xi, basis),
                                                           rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 64))
def test_field_and_coefficient_routes_agree(basis, seed, d):
    rng = np.random.default_rng(seed)
    xi, mu = rng.normal(size=64), rng.normal(size=d)
    field = inversion_error(mu, xi, basis)
    coeff = coefficient_inversion_error(mu, xi, basis.eigenvalues)
    assert field == pytest.approx(coeff, abs=1e-10)


def test_zero_reference_rejected(basis):
    with pytest.raises(ConfigError):
        inversion_error(np.ones(4), np.zeros(64), basis)


# benchmark matrix

def test_cells_cartesian_product():
    cs = cells(["darcy1d"], ["ours", "pcn"], [32], [0.01, 0.05])
    assert len(cs) == 4 and cs[0] == Cell("darcy1d", "ours", 32, 0.01)


def test_failed_cells_become_gaps(caplog):
    def run_cell(cell, rep):
        if cell.method == "pcn" and rep == 1:
            raise NumericError("diverged")
        return {"e_I": 0.1 * (rep + 1), "e_S_final": 0.01, "stages_run": 3, "converged": True}

    with caplog.at_level(logging.ERROR):
        rows = run_matrix(cells(["darcy1d"], ["ours", "pcn"], [32], [0.01]), run_cell, 3)
    assert len(rows) == 6
    assert [r["converged"] for r in rows].count("failed") == 1
    assert "failed" in caplog.text
    summary = {s[1]: s for s in summarize(rows)}
    assert summary["ours"][4:] == (3, pytest.approx(0.2), 0.01, 0)
    assert summary["pcn"][4:] == (3, pytest.approx(0.2), 0.01, 1)
