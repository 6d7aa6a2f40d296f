import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vflow import difftensor as dt
from vflow import randfield as rf
from vflow.errors import ConfigError, NumericError, ShapeError
from vflow.forward import (InverseProblem, Likelihood, LinearGaussianProblem, ObservationOp,
                           ProblemSpec, interior_lattice, load_observation, log_unnorm_posterior,
                           misfit, observe, save_observation, solve_darcy1d, solve_darcy2d,
                           solve_ns2d)


def test_darcy1d_constant_coefficient():
    x = np.linspace(0, 1, 1024)
    p = solve_darcy1d(np.zeros(1024))
    assert np.max(np.abs(p - x * (1 - x) / 2)) < 1e-6
    assert p[np.argmin(np.abs(x - 0.5))] == pytest.approx(0.125, abs=1e-6)


def test_darcy1d_constant_shift_scales():
    p0 = solve_darcy1d(np.zeros(257))
    p1 = solve_darcy1d(np.full(257, 0.7))
    np.testing.assert_allclose(p1, np.exp(-0.7) * p0, atol=1e-15)


def _manufactured_1d(n):
    x = np.linspace(0, 1, n)
    m = 0.5 * np.sin(2 * np.pi * x)
    dm = np.pi * np.cos(2 * np.pi * x)
    p = np.sin(np.pi * x)
    dp = np.pi * np.cos(np.pi * x)
    d2p = -np.pi**2 * np.sin(np.pi * x)
    f = -np.exp(m) * (dm * dp + d2p)
    return np.max(np.abs(solve_darcy1d(m, f) - p))


def test_darcy1d_second_order():
    errs = [_manufactured_1d(n) for n in (256, 512, 1024)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    for r in ratios:
        assert 3.5 < r < 4.5


def test_darcy1d_rejects_bad_field():
    with pytest.raises(NumericError):
        solve_darcy1d(np.full(10, np.nan))
    with pytest.raises(ShapeError):
        solve_darcy1d(np.zeros(2))


def test_darcy2d_zero_source():
    np.testing.assert_array_equal(solve_darcy2d(np.zeros((71, 71)), np.zeros((71, 71))), 0.0)


def _manufactured_2d(n):
    x = np.linspace(0, 1, n)
    exact = np.outer(np.sin(np.pi * x), np.sin(np.pi * x))
    p = solve_darcy2d(np.zeros((n, n)), 2 * np.pi**2 * exact)
    return np.max(np.abs(p - exact))


def test_darcy2d_manufactured_solution():
    assert _manufactured_2d(71) < 1e-3


def test_darcy2d_observed_order():
    e1, e2 = _manufactured_2d(36), _manufactured_2d(71)
    assert math.log2(e1 / e2) >= 1.8


def test_darcy2d_mirror_symmetry():
    rng = np.random.default_rng(0)
    half = rng.normal(size=(36, 71)) * 0.5
    m = np.concatenate([half, half[:-1][::-1]], axis=0)
    assert np.array_equal(m, m[::-1])
    p = solve_darcy2d(m)
    np.testing.assert_allclose(p, p[::-1], atol=1e-8 * np.abs(p).max())


def test_darcy2d_batch_matches_single():
    rng = np.random.default_rng(1)
    ms = rng.normal(size=(3, 21, 21))
    batch = solve_darcy2d(ms)
    for m, p in zip(ms, batch):
        np.testing.assert_allclose(solve_darcy2d(m), p, atol=1e-12 * np.abs(p).max())


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_darcy_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    basis1 = rf.build_basis(rf.GrfSpec(2.0, 1.0, 2.0, "interval-neumann-1d", 32, 1024))
    basis2 = rf.build_basis(rf.GrfSpec(1.0, 2.0, 3.0, "square-neumann-2d", 32, 71))
    p1 = solve_darcy1d(rf.synthesize(basis1, rng.uniform(-10, 10, 32)))
    p2 = solve_darcy2d(rf.synthesize(basis2, rng.uniform(-10, 10, 32)))
    assert p1.min() >= -1e-12 and p2.min() >= -1e-12


def test_ns_single_mode_decay():
    n = 128
    x = np.arange(n) / n
    w0 = np.broadcast_to(np.sin(2 * np.pi * x)[:, None], (n, n))
    w1 = solve_ns2d(w0, forcing=np.zeros((n, n)))
    factor = np.exp(-1e-2 * 4 * np.pi**2)
    assert factor == pytest.approx(0.6738, abs=1e-4)
    assert np.max(np.abs(w1 - factor * w0)) < 1e-3


def test_ns_zero_state():
    np.testing.assert_array_equal(solve_ns2d(np.zeros((32, 32)), forcing=np.zeros((32, 32))), 0.0)


def test_ns_mean_conserved():
    basis = rf.build_basis(rf.GrfSpec(25.0, 2.0, 2.5, "square-periodic-2d", 32, 64))
    w0 = rf.synthesize(basis, np.random.default_rng(3).normal(size=32)) + 0.37
    w1 = solve_ns2d(w0)
    assert abs(w1.mean() - w0.mean()) < 1e-10


def test_ns_enstrophy_non_increasing_without_forcing():
    basis = rf.build_basis(rf.GrfSpec(25.0, 2.0, 2.5, "square-periodic-2d", 32, 64))
    w0 = rf.synthesize(basis, np.random.default_rng(4).uniform(-10, 10, 32))
    values = [0.5 * np.mean(w0**2)]
    solve_ns2d(w0, forcing=np.zeros((64, 64)),
               callback=lambda step, w: values.append(0.5 * np.mean(w**2)))
    assert len(values) == 101
    assert np.all(np.diff(values) <= 1e-10)


def test_ns_blowup_reports_step():
    w0 = np.zeros((16, 16))
    w0[3, 3] = 1e300
    with pytest.raises(NumericError, match="step"):
        solve_ns2d(w0)


def test_observe_constant_field():
    obs = interior_lattice(6, 71, 2, False)
    np.testing.assert_array_equal(observe(np.full((71, 71), 2.5), obs), np.full(36, 2.5))


def test_observation_locations():
    obs1 = interior_lattice(31, 1024, 1, False)
    x = np.linspace(0, 1, 1024)
    assert obs1.count == 31
    for j, (i,) in enumerate(obs1.locations, start=1):
        assert abs(x[i] - j / 32) <= 0.5 / 1023 + 1e-15
    obs2 = interior_lattice(6, 71, 2, False)
    assert obs2.count == 36
    assert sorted({a for a, _ in obs2.locations}) == [10, 20, 30, 40, 50, 60]
    obs3 = interior_lattice(6, 128, 2, True)
    assert sorted({a for a, _ in obs3.locations}) == [18, 37, 55, 73, 91, 110]


def test_observe_out_of_range():
    with pytest.raises(ConfigError):
        observe(np.zeros(10), ObservationOp(((12,),)))


def test_observe_tensor_path():
    u = dt.Tensor(np.arange(20.0).reshape(2, 10))
    out = observe(u, ObservationOp(((1,), (7,))))
    np.testing.assert_array_equal(out.data, [[1, 7], [11, 17]])


def test_gen_observation_zero_noise():
    prob = InverseProblem(ProblemSpec("darcy1d", 8, 0.0, seed=5))
    np.testing.assert_array_equal(prob.lik.y, prob.clean_data)


def test_gen_observation_noise_scale_and_determinism():
    spec = ProblemSpec("darcy1d", 8, 0.05, seed=5)
    a, b = InverseProblem(spec), InverseProblem(spec)
    assert a.lik.noise_std == pytest.approx(0.05 * np.max(np.abs(a.clean_data)))
    assert np.array_equal(a.lik.y, b.lik.y)
    assert not np.array_equal(a.lik.y, a.clean_data)


def test_reference_uses_256_modes():
    prob = InverseProblem(ProblemSpec("darcy2d", 32, 0.01, seed=0))
    assert prob.xi_ref.shape == (256,)
    assert np.all(np.abs(prob.xi_ref) <= 10)
    np.testing.assert_allclose(prob.m_ref, rf.synthesize(prob.basis_ref, prob.xi_ref))


def test_misfit_examples():
    assert misfit(np.array([1.0, 2.0]), Likelihood(np.array([1.0, 2.0]), 1.0)) == 0.0
    assert misfit(np.zeros(2), Likelihood(np.ones(2), 1.0)) == 1.0
    g = np.array([0.3, -1.0, 2.0])
    y = np.array([1.0, 0.5, 0.0])
    base = misfit(g, Likelihood(y, 1.0))
    # covariance scaled by 4 means std scaled by 2
    assert misfit(g, Likelihood(y, 2.0)) == pytest.approx(base / 4)
    with pytest.raises(ShapeError):
        misfit(np.zeros(3), Likelihood(np.ones(2), 1.0))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_misfit_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    g, y = rng.normal(size=(2, 6))
    std = rng.uniform(0.1, 2, 6)
    perm = rng.permutation(6)
    a = misfit(g, Likelihood(y, std))
    b = misfit(g[perm], Likelihood(y[perm], std[perm]))
    assert a == pytest.approx(b, rel=1e-12)


def test_log_unnorm_posterior_parts():
    prob = LinearGaussianProblem.random(4, 3, 0.5, seed=0)
    mu0 = np.array([0.1, -0.2, 0.0, 0.3])
    xi = np.array([0.5, 0.5, -1.0, 2.0])
    value = log_unnorm_posterior(xi, prob.lik, mu0, prob.forward)
    r = (prob.lik.y - prob.A @ xi) / 0.5
    assert value == pytest.approx(-0.5 * r @ r - 0.5 * np.sum((xi - mu0) ** 2), rel=1e-13)
    exact = Likelihood(prob.A @ mu0, 0.5)
    assert log_unnorm_posterior(mu0, exact, mu0, prob.forward) == 0.0


def test_log_unnorm_posterior_prior_mode():
    lik = Likelihood(np.zeros(1), 1.0)
    mu0 = np.array([0.7, -0.4])
    flat = lambda xi: np.zeros(np.shape(xi)[:-1] + (1,))
    best = log_unnorm_posterior(mu0, lik, mu0, flat)
    rng = np.random.default_rng(0)
    others = log_unnorm_posterior(mu0 + rng.normal(size=(50, 2)), lik, mu0, flat)
    assert np.all(others < best)


def test_log_unnorm_posterior_tensor_matches_numpy():
    prob = LinearGaussianProblem.random(3, 5, 0.3, seed=2)
    xi = np.random.default_rng(1).normal(size=(4, 3))
    mu0 = np.ones(3)
    t = log_unnorm_posterior(dt.Tensor(xi), prob.lik, mu0, prob.forward)
    np.testing.assert_allclose(t.data, log_unnorm_posterior(xi, prob.lik, mu0, prob.forward))


def test_observation_record_roundtrip(tmp_path):
    prob = InverseProblem(ProblemSpec("darcy1d", 8, 0.05, seed=1))
    path = tmp_path / "obs.json"
    save_observation(path, prob.lik, prob.obs, 1)
    lik, obs, seed = load_observation(path)
    assert np.array_equal(lik.y, prob.lik.y)
    assert lik.noise_std == prob.lik.noise_std
    assert obs == prob.obs and seed == 1


def test_forward_deterministic_and_batched():
    prob = InverseProblem(ProblemSpec("darcy2d", 8, 0.01, grid=31))
    xi = np.random.default_rng(0).normal(size=(2, 8))
    a = prob.forward(xi)
    assert np.array_equal(a, prob.forward(xi))
    np.testing.assert_array_equal(a[1], prob.forward(xi[1]))
