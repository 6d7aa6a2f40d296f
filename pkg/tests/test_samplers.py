import logging
import math

import numpy as np
import pytest

from vflow.errors import ConfigError
from vflow.forward import LinearGaussianProblem
from vflow.samplers import (PcnState, SvgdEnsemble, acceptance_probability, augment_with_prior,
                            batch_means_stderr, draw_stretch, ensemble_mcmc_run,
                            median_bandwidth, pcn_init, pcn_propose, pcn_run, pcn_step,
                            sigma_points, stretch_log_factor, stretch_proposal,
                            svgd_direction, svgd_run, svgd_step, uki_init, uki_run, uki_step,
                            unscented_mean)


@pytest.fixture(scope="module")
def conjugate():
    return LinearGaussianProblem.random(d=4, m=3, noise_std=0.5, seed=3)


# pCN

def test_downhill_proposal_always_accepted():
    assert acceptance_probability(3.0, 2.0) == 1.0
    assert acceptance_probability(3.0, 3.0) == 1.0
    assert acceptance_probability(2.0, 3.0) == pytest.approx(math.exp(-1.0))


def test_beta_one_is_prior_draw():
    state = PcnState(np.array([5.0, -5.0]), 0.0, 1.0, np.array([1.0, 2.0]), np.eye(2))
    eta = np.array([0.3, -0.7])
    np.testing.assert_allclose(pcn_propose(state, eta), [1.3, 1.3])


def test_beta_outside_range_rejected():
    with pytest.raises(ConfigError):
        PcnState(np.zeros(1), 0.0, 0.0, np.zeros(1), np.eye(1))


def test_constant_misfit_samples_prior():
    mu0 = np.array([1.0, -2.0, 0.5, 3.0])
    res = pcn_run(lambda m: 0.0, mu0, iters=100_000, beta=0.5, burn=0.0, thin=1,
                  rng=np.random.default_rng(0))
    assert res.acceptance_rate == 1.0
    assert np.max(np.abs(res.mean - mu0)) < 0.05
    np.testing.assert_allclose(np.var(res.samples, axis=0), 1.0, atol=0.05)


def test_pcn_recovers_conjugate_mean(conjugate):
    mean, _ = conjugate.posterior()
    res = pcn_run(conjugate.misfit, np.zeros(4), iters=60_000, beta=0.3, thin=5,
                  rng=np.random.default_rng(1))
    se = batch_means_stderr(res.samples)
    assert np.all(np.abs(res.mean - mean) < 3 * se + 1e-3)


def test_pcn_deterministic(conjugate):
    a = pcn_run(conjugate.misfit, np.zeros(4), iters=500, rng=np.random.default_rng(5))
    b = pcn_run(conjugate.misfit, np.zeros(4), iters=500, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a.samples, b.samples)


def test_pcn_burn_and_thin_counts():
    res = pcn_run(lambda m: 0.0, np.zeros(2), iters=5000, rng=np.random.default_rng(0))
    assert res.samples.shape == (400, 2)


def test_pcn_step_counts():
    state = pcn_init(lambda m: float(m @ m), np.zeros(3))
    rng = np.random.default_rng(0)
    for _ in range(10):
        pcn_step(state, lambda m: float(m @ m), rng)
    assert state.proposed == 10 and 0 <= state.accepted <= 10


# UKI

def test_unscented_identity_recovers_mean_and_cov():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 5))
    cov = a @ a.T + np.eye(5)
    mean = rng.normal(size=5)
    pts = sigma_points(mean, cov)
    assert len(pts) == 11
    np.testing.assert_allclose(unscented_mean(pts), mean, atol=1e-12)
    dev = pts[1:] - mean
    np.testing.assert_allclose(dev.T @ dev / 10, cov, atol=1e-12)


def test_no_information_step_leaves_state_unchanged():
    state = uki_init(np.zeros(2), np.inf, np.zeros(3), alpha=1.0,
                     sigma_omega=np.zeros((3, 3)), prior_cov=np.diag([1.0, 2.0, 3.0]))
    state.mean = np.array([0.2, 0.1, 0.3])
    cov = state.cov.copy()
    uki_step(state, lambda p: p[:, :2])
    np.testing.assert_allclose(state.mean, [0.2, 0.1, 0.3], atol=1e-15)
    np.testing.assert_allclose(state.cov, cov, atol=1e-15)


def linear_fixed_point(A, y, noise_cov, alpha, r0, c0, factor=2.0):
    """Iterate the exact Kalman covariance recursion, then solve for the stationary mean."""
    d = A.shape[1]
    omega = (2 - alpha ** 2) * c0
    nu = factor * noise_cov
    cov = c0.copy()
    for _ in range(5000):
        c_hat = alpha ** 2 * cov + omega
        gain = c_hat @ A.T @ np.linalg.inv(A @ c_hat @ A.T + nu)
        new = c_hat - gain @ A @ c_hat
        if np.max(np.abs(new - cov)) < 1e-15:
            break
        cov = new
    c_hat = alpha ** 2 * cov + omega
    gain = c_hat @ A.T @ np.linalg.inv(A @ c_hat @ A.T + nu)
    ika = np.eye(d) - gain @ A
    lhs = np.eye(d) - alpha * ika
    rhs = ika @ ((1 - alpha) * r0) + gain @ y
    return np.linalg.solve(lhs, rhs)


def test_uki_linear_converges_to_fixed_point(conjugate):
    A, y, s = conjugate.A, conjugate.lik.y, conjugate.lik.noise_std
    r0 = np.full(4, 0.3)
    state = uki_init(y, s, r0, alpha=0.5)
    uki_run(lambda p: p @ A.T, state, 300)
    target = linear_fixed_point(A, y, s ** 2 * np.eye(3), 0.5, r0, np.eye(4))
    np.testing.assert_allclose(state.mean, target, atol=1e-3)


def test_uki_augmented_recovers_posterior_mean(conjugate):
    fwd, y_aug, cov = augment_with_prior(lambda p: p @ conjugate.A.T, conjugate.lik.y,
                                         conjugate.lik.noise_std, np.zeros(4))
    state = uki_init(y_aug, cov, np.zeros(4), alpha=1.0)
    uki_run(fwd, state, 200)
    np.testing.assert_allclose(state.mean, conjugate.posterior()[0], atol=1e-6)


def test_uki_covariance_stays_symmetric(conjugate):
    state = uki_init(conjugate.lik.y, conjugate.lik.noise_std, np.zeros(4))

    def check(it, st):
        assert np.max(np.abs(st.cov - st.cov.T)) <= 1e-12

    uki_run(lambda p: np.tanh(p @ conjugate.A.T), state, 30, callback=check)


def test_uki_rejects_bad_alpha():
    with pytest.raises(ConfigError):
        uki_init(np.zeros(1), 1.0, np.zeros(1), alpha=0.0)


# SVGD

def test_two_particle_bandwidth():
    assert median_bandwidth(np.array([[0.0], [2.0]])) == pytest.approx(4 / math.log(2))
    assert median_bandwidth(np.array([[0.0], [2.0]])) == pytest.approx(5.771, abs=1e-3)


def test_single_particle_rejected():
    with pytest.raises(ConfigError):
        SvgdEnsemble(np.zeros((1, 2)))
    with pytest.raises(ConfigError):
        median_bandwidth(np.zeros((1, 2)))


def test_coincident_particles_have_no_repulsion(caplog):
    x = np.ones((4, 2))
    with caplog.at_level(logging.WARNING):
        phi = svgd_direction(x, np.zeros_like(x))
    np.testing.assert_array_equal(phi, 0.0)
    assert "coincide" in caplog.text


def test_repulsion_separates_close_pair():
    ens = SvgdEnsemble(np.array([[0.0, 0.0], [1e-3, 0.0]]))
    svgd_step(ens, lambda x: np.zeros_like(x))
    assert np.linalg.norm(ens.particles[0] - ens.particles[1]) > 1e-3


def test_repulsion_direction_increases_min_distance():
    x = np.array([[0.0], [1e-3], [1.0], [2.5]])
    phi = svgd_direction(x, np.zeros_like(x))
    moved = x + 1e-2 * phi
    def min_dist(p):
        d = np.abs(p - p.T)
        return d[np.triu_indices(len(p), 1)].min()
    assert min_dist(moved) > min_dist(x)


def test_svgd_gaussian_target_mean():
    target = np.array([1.0, -0.5])
    ens = SvgdEnsemble(np.random.default_rng(0).normal(size=(100, 2)), stepsize=5e-2)
    svgd_run(ens, lambda x: -(x - target), 1500)
    np.testing.assert_allclose(ens.particles.mean(axis=0), target, atol=0.05)


def test_svgd_deterministic():
    init = np.random.default_rng(0).normal(size=(10, 2))
    a = svgd_run(SvgdEnsemble(init), lambda x: -x, 20).particles
    b = svgd_run(SvgdEnsemble(init), lambda x: -x, 20).particles
    np.testing.assert_array_equal(a, b)


# Ensemble sampler

def test_stretch_unit_z_is_self_transition():
    x, p = np.array([[1.0, 2.0]]), np.array([[-3.0, 0.5]])
    np.testing.assert_array_equal(stretch_proposal(x, p, np.array([1.0])), x)


def test_stretch_factor():
    z = np.array([0.7, 1.9])
    np.testing.assert_array_equal(stretch_log_factor(z, 1), 0.0)
    np.testing.assert_allclose(stretch_log_factor(z, 3), 2 * np.log(z))


def test_stretch_draws_in_range():
    z = draw_stretch(10_000, 2.0, np.random.default_rng(0))
    assert z.min() >= 0.5 and z.max() <= 2.0


def test_ensemble_gaussian_variance():
    rng = np.random.default_rng(0)
    res = ensemble_mcmc_run(lambda x: -0.5 * np.sum(x * x, axis=1) / 4.0,
                            rng.normal(size=(100, 1)), burn=200, steps=2000, rng=rng, thin=10)
    assert len(res.samples) == 20_000
    assert abs(res.samples.var() / 4.0 - 1.0) < 0.05


def test_ensemble_rejects_too_few_walkers():
    with pytest.raises(ConfigError):
        ensemble_mcmc_run(lambda x: -np.sum(x * x, axis=1), np.zeros((4, 3)), 1, 1,
                          np.random.default_rng(0))


def test_ensemble_deterministic():
    init = np.random.default_rng(1).normal(size=(8, 2))
    f = lambda x: -np.sum(x * x, axis=1)
    a = ensemble_mcmc_run(f, init, 10, 10, np.random.default_rng(2)).samples
    b = ensemble_mcmc_run(f, init, 10, 10, np.random.default_rng(2)).samples
    np.testing.assert_array_equal(a, b)
