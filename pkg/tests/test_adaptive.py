import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vflow import difftensor as dt
from vflow.adaptive import (STAGE_COLUMNS, LinearTask, LoopConfig, build_stage_dataset,
                            estimate_posterior_mean, perturb, run_adaptive, stopping_check,
                            update_prior_mean)
from vflow.errors import ConfigError, NumericError, SolverError
from vflow.forward import LinearGaussianProblem
from vflow.vfmodel import VfConfig, VfModel

SMALL_VF = VfConfig(latent=3, prior_layers=2, encoder_layers=2, subnet_hidden=16, decoder_depth=0)
finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.fixture(scope="module")
def problem():
    return LinearGaussianProblem.random(d=4, m=3, noise_std=0.5, seed=3)


def small_vf(seed=0):
    return VfModel(4, SMALL_VF, np.random.default_rng(seed))


# prior-mean update

def test_update_examples():
    np.testing.assert_array_equal(update_prior_mean([2.0], [0.0], 1.0), [2.0])
    np.testing.assert_array_equal(update_prior_mean([2.0], [0.0], 0.5), [1.0])
    np.testing.assert_allclose(update_prior_mean([2.0], [0.5], 1e-12), [0.5], atol=1e-11)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite),
       st.floats(0.0, 1.0))
def test_update_stays_on_segment(post, prev, alpha):
    new = update_prior_mean(post, prev, alpha)
    lo, hi = np.minimum(post, prev), np.maximum(post, prev)
    tol = 1e-9 * (1 + np.abs(hi))
    assert np.all(new >= lo - tol) and np.all(new <= hi + tol)


def test_target_prior_covariance_is_fixed(problem):
    # Moving the prior mean shifts the score by exactly the mean difference.
    task = LinearTask(problem)
    x = np.random.default_rng(0).normal(size=(6, 4))
    a, b = np.zeros(4), np.array([1.0, -2.0, 0.5, 3.0])
    diff = task.grad_log_target(b)(x) - task.grad_log_target(a)(x)
    np.testing.assert_allclose(diff, np.broadcast_to(b - a, x.shape), atol=1e-12)


def test_tensor_target_matches_score(problem):
    task = LinearTask(problem)
    mu = np.array([0.3, -0.2, 0.1, 0.0])
    x = dt.Tensor(np.random.default_rng(1).normal(size=(3, 4)), requires_grad=True)
    with dt.Tape():
        out = dt.sum_(task.log_target(mu)(x))
        (g,) = dt.grad_of(out, [x])
    np.testing.assert_allclose(g, task.grad_log_target(mu)(x.data), atol=1e-10)


# posterior mean, perturbation, dataset

def test_mean_of_single_sample_is_the_sample():
    vf = small_vf()
    a = estimate_posterior_mean(vf, 1, np.random.default_rng(4))
    b = vf.sample(1, np.random.default_rng(4))[0]
    np.testing.assert_array_equal(a, b)


def test_mean_needs_a_sample():
    with pytest.raises(ConfigError):
        estimate_posterior_mean(small_vf(), 0, np.random.default_rng(0))


def test_perturb_zero_gamma_is_identity():
    xi = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(perturb(xi, 0.0, np.random.default_rng(0)), xi)


def test_perturb_spread():
    xi = np.zeros((500, 4))
    out = perturb(xi, 3.0, np.random.default_rng(0))
    assert abs(out.std() / 3.0 - 1.0) < 0.1


def test_stage_dataset_size_and_ids(problem):
    task = LinearTask(problem)
    draw = lambda n, rng: rng.normal(size=(n, 4))
    a = build_stage_dataset(draw, task, 7, 3.0, np.random.default_rng(0), stage=1)
    b = build_stage_dataset(draw, task, 7, 3.0, np.random.default_rng(1), stage=2)
    assert len(a.xi) == len(a.outputs) == len(a.ids) == 7
    assert not set(a.ids) & set(b.ids)


class FlakyTask(LinearTask):
    def __init__(self, problem, failures):
        super().__init__(problem)
        self.failures = failures

    def exact_pair(self, xi):
        if self.failures > 0:
            self.failures -= 1
            raise SolverError("singular system")
        return super().exact_pair(xi)


def test_failed_solves_are_redrawn(problem, caplog):
    draw = lambda n, rng: rng.normal(size=(n, 4))
    with caplog.at_level(logging.WARNING):
        data = build_stage_dataset(draw, FlakyTask(problem, 2), 5, 1.0,
                                   np.random.default_rng(0), stage=1)
    assert len(data.xi) == 5
    assert "redrawing" in caplog.text


def test_persistent_solver_failure_raises(problem):
    draw = lambda n, rng: rng.normal(size=(n, 4))
    with pytest.raises(SolverError):
        build_stage_dataset(draw, FlakyTask(problem, 100), 2, 1.0, np.random.default_rng(0), 1)


# stopping rule

def test_stopping_examples():
    assert stopping_check(10.0, 9.95, 0.01)
    assert not stopping_check(10.0, 5.0, 0.01)
    assert stopping_check(0.0, 0.0, 0.01)


def test_infinite_tolerance_stops_after_one_stage(problem):
    cfg = LoopConfig(k_max=5, n_epochs=1, m=10, stage_samples=64, batch=32,
                     epsilon=float("inf"), final_samples=10)
    res = run_adaptive(LinearTask(problem), small_vf(), cfg, seed=0)
    assert res.converged and res.stages_run == 1
    assert res.dataset_ids == []


# full loop

def test_stage_log_layout_and_determinism(problem):
    cfg = LoopConfig(k_max=2, n_epochs=2, m=20, stage_samples=64, batch=32, epsilon=1e-12,
                     final_samples=50)
    a = run_adaptive(LinearTask(problem), small_vf(1), cfg, seed=7)
    b = run_adaptive(LinearTask(problem), small_vf(1), cfg, seed=7)
    assert a.csv() == b.csv()
    lines = a.csv().splitlines()
    assert lines[0] == ",".join(STAGE_COLUMNS)
    assert len(lines) == 1 + 2 * 2
    assert len(a.stage_rows) == 2
    assert len(a.prior_trace) == 3
    np.testing.assert_array_equal(a.samples, b.samples)


def test_linear_loop_matches_conjugate_posterior(problem):
    vf = small_vf()
    cfg = LoopConfig(k_max=15, n_epochs=5, m=500, stage_samples=1024, batch=64, vf_lr=2e-3,
                     epsilon=1e-3)
    res = run_adaptive(LinearTask(problem), vf, cfg, seed=0)
    target, _ = problem.posterior(res.mu_prior)
    assert np.max(np.abs(res.mu_post - target)) < 0.05


class NanOnceTask(LinearTask):
    """Target that returns NaN for its first ``bad`` evaluations."""

    def __init__(self, problem, bad):
        super().__init__(problem)
        self.bad = bad

    def log_target(self, mu_prior):
        inner = super().log_target(mu_prior)

        def target(xi):
            out = inner(xi)
            if self.bad > 0:
                self.bad -= 1
                return out * float("nan")
            return out

        return target


def test_divergence_restarts_with_smaller_step(problem, caplog):
    cfg = LoopConfig(k_max=1, n_epochs=1, m=10, stage_samples=64, batch=32, final_samples=10)
    with caplog.at_level(logging.WARNING):
        res = run_adaptive(NanOnceTask(problem, 1), small_vf(), cfg, seed=0)
    assert res.stages_run == 1
    assert "restarting with lr 0.0005" in caplog.text


def test_second_divergence_is_fatal(problem):
    cfg = LoopConfig(k_max=1, n_epochs=1, m=10, stage_samples=64, batch=32, final_samples=10)
    with pytest.raises(NumericError):
        run_adaptive(NanOnceTask(problem, 5), small_vf(), cfg, seed=0)


def test_loop_config_validation():
    with pytest.raises(ConfigError):
        LoopConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        LoopConfig(k_max=0)
