"""Staged inversion loop: VF training under a moving prior mean, then surrogate
fine-tuning on fresh exact solves drawn around the current posterior.

The loop is written against a small task interface so the same driver serves the
PDE problems (FNO surrogate) and closed-form linear problems used as oracles.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import difftensor as dt
from . import randfield as rf
from .errors import ConfigError, NumericError, SolverError
from .forward import InverseProblem, LinearGaussianProblem, misfit
from .metrics import inversion_error
from .samplers import SvgdEnsemble, svgd_step, uki_init, uki_step
from .seeding import component_rng
from .surrogate import FnoModel, SurrogateForward, fno_finetune, surrogate_fitting_error
from .vfmodel import VfModel

log = logging.getLogger(__name__)

STAGE_COLUMNS = ("stage", "epoch", "vf_loss", "phi_prior_exact", "e_I", "e_S")
MAX_RETRIES = 3


@dataclass(frozen=True)
class LoopConfig:
    k_max: int = 20
    n_epochs: int = 10
    m: int = 500
    alpha: float = 0.5
    gamma: float = 3.0
    epsilon: float = 0.01
    vf_lr: float = 1e-3
    batch: int = 32
    stage_samples: int = 1024
    fno_epochs: int = 100
    fno_batch: int = 25
    fno_lr: float = 1e-3
    fno_halve_every: int = 25
    es_samples: int = 100
    final_samples: int = 2000

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if min(self.k_max, self.n_epochs, self.m, self.batch, self.stage_samples) < 1:
            raise ConfigError("stage counts and sizes must be positive")

    @property
    def steps_per_epoch(self) -> int:
        return max(1, self.stage_samples // self.batch)


# -- building blocks ---------------------------------------------------------

def update_prior_mean(mu_post, mu_prev, alpha):
    """Moving average alpha * mu_post + (1 - alpha) * mu_prev."""
    return alpha * np.asarray(mu_post, float) + (1.0 - alpha) * np.asarray(mu_prev, float)


def estimate_posterior_mean(vf: VfModel, m: int, rng) -> np.ndarray:
    if m < 1:
        raise ConfigError("need at least one sample for a mean estimate")
    return vf.sample(m, rng).mean(axis=0)


def perturb(xi, gamma, rng) -> np.ndarray:
    xi = np.asarray(xi, float)
    return xi + gamma * rng.standard_normal(xi.shape)


def stopping_check(phi_prev: float, phi_curr: float, epsilon: float) -> bool:
    """True when the relative misfit change drops below ``epsilon``."""
    if phi_prev == 0.0:
        log.info("misfit at the previous prior mean is zero; treating as converged")
        return True
    return abs(phi_prev - phi_curr) / phi_prev < epsilon


@dataclass
class StageDataset:
    stage: int
    ids: list
    xi: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray


def build_stage_dataset(sampler, task, m: int, gamma: float, rng, stage: int) -> StageDataset:
    """``m`` fresh exact pairs at perturbed draws of ``sampler(n, rng)``.

    A draw whose solve fails is replaced by a new one, at most MAX_RETRIES times each.
    """
    xs, ins, outs = [], [], []
    for j in range(m):
        for attempt in range(MAX_RETRIES + 1):
            xi = perturb(sampler(1, rng)[0], gamma, rng)
            try:
                pair = task.exact_pair(xi)
                break
            except (SolverError, NumericError) as exc:
                log.warning("stage %d sample %d: solve failed (%s), redrawing", stage, j, exc)
        else:
            raise SolverError(f"stage {stage}: sample {j} failed {MAX_RETRIES + 1} times")
        xs.append(xi)
        ins.append(pair[0])
        outs.append(pair[1])
    return StageDataset(stage, [(stage, j) for j in range(m)], np.array(xs), np.array(ins),
                        np.array(outs))


# -- tasks ---------------------------------------------------------------------

class PdeTask:
    """An InverseProblem paired with an FNO surrogate on the problem's surrogate grid."""

    def __init__(self, problem: InverseProblem, model: FnoModel, seed: int = 0):
        self.problem = problem
        self.model = model
        self.forward = SurrogateForward.for_problem(model, problem)
        self.d = problem.d
        self.seed = seed

    def log_target(self, mu_prior):
        mu = dt.Tensor(np.asarray(mu_prior, float))
        lik = self.problem.lik

        def target(xi):
            phi = misfit(self.forward(xi), lik)
            return dt.neg(phi) - dt.sum_(dt.square(xi - mu), axis=-1) * 0.5

        return target

    def surrogate_forward(self, xi) -> np.ndarray:
        return self.forward(np.asarray(xi, float))

    def grad_log_target(self, mu_prior):
        target = self.log_target(mu_prior)

        def grad(x):
            leaf = dt.variable(x)
            with dt.Tape():
                out = dt.sum_(target(leaf))
                return dt.grad_of(out, [leaf])[0]

        return grad

    def exact_misfit(self, xi) -> float:
        return float(self.problem.misfit(np.asarray(xi, float)))

    def exact_pair(self, xi):
        fine = self.problem.state(xi)
        m = rf.synthesize(self.problem.surrogate_basis, xi)
        return m, self.problem.to_surrogate_grid(fine[None])[0]

    def finetune(self, data: StageDataset, config: LoopConfig, rng):
        fno_finetune(self.model, data.inputs, data.outputs, epochs=config.fno_epochs,
                     batch=config.fno_batch, lr=config.fno_lr,
                     halve_every=config.fno_halve_every, rng=rng)

    def inversion_error(self, mu) -> float:
        return inversion_error(mu, self.problem.xi_ref, self.problem.basis_ref)

    def fitting_error(self, config: LoopConfig) -> float:
        p = self.problem
        return surrogate_fitting_error(self.forward.states, p.exact_states, p.xi_ref[:p.d],
                                       p.geometry, n=config.es_samples,
                                       rng=component_rng(self.seed, "fitting-error"))


class LinearTask:
    """Closed-form linear problem with no surrogate; exact and surrogate maps coincide."""

    def __init__(self, problem: LinearGaussianProblem):
        self.problem = problem
        self.d = problem.d

    def log_target(self, mu_prior):
        mu = dt.Tensor(np.asarray(mu_prior, float))
        lik = self.problem.lik

        def target(xi):
            phi = misfit(self.problem.forward(xi), lik)
            return dt.neg(phi) - dt.sum_(dt.square(xi - mu), axis=-1) * 0.5

        return target

    def surrogate_forward(self, xi):
        return self.problem.forward(np.asarray(xi, float))

    def grad_log_target(self, mu_prior):
        p = self.problem
        w = p.lik.precision_sqrt() ** 2 * np.ones(p.A.shape[0])

        def grad(x):
            return ((p.lik.y - x @ p.A.T) * w) @ p.A - (x - mu_prior)

        return grad

    def exact_misfit(self, xi) -> float:
        return float(self.problem.misfit(np.asarray(xi, float)))

    def exact_pair(self, xi):
        return np.asarray(xi, float), self.problem.forward(xi)

    def finetune(self, data, config, rng):
        pass

    def inversion_error(self, mu) -> float:
        return float("nan")

    def fitting_error(self, config) -> float:
        return 0.0


# -- stage log -----------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def stage_log_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STAGE_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in STAGE_COLUMNS])
    return buf.getvalue()


@dataclass
class AdaptiveResult:
    mu_post: np.ndarray
    samples: np.ndarray
    rows: list
    converged: bool
    stages_run: int
    mu_prior: np.ndarray
    prior_trace: list = field(default_factory=list)
    dataset_ids: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    @property
    def stage_rows(self) -> list:
        return [r for r in self.rows if r.get("phi_prior_exact") is not None]

    def csv(self) -> str:
        return stage_log_csv(self.rows)


# -- the VF loop ---------------------------------------------------------------

def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, v in zip(params, snap):
        p.data[...] = v


def _train_epoch(vf: VfModel, target, opt, steps, batch, rng) -> float:
    params = vf.params()
    total = 0.0
    for _ in range(steps):
        with dt.Tape():
            loss = vf.unnorm_loss(target, batch, rng)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError("VF loss is not finite")
            dt.backward(loss, params)
        opt.step()
        total += value
    return total / steps


def run_adaptive(task, vf: VfModel, config: LoopConfig = LoopConfig(), seed: int = 0,
                 mu0=None, on_stage=None) -> AdaptiveResult:
    """Alternate VF training under a moving prior mean with surrogate fine-tuning.

    Every random stream derives from ``seed``. ``on_stage(row)`` is called after each
    stage's log row is complete.
    """
    rng_vf = component_rng(seed, "vf-train")
    rng_mean = component_rng(seed, "posterior-mean")
    rng_data = component_rng(seed, "stage-data")
    rng_fno = component_rng(seed, "fno-finetune")
    params = vf.params()
    opt = dt.Adam(params, lr=config.vf_lr)
    mu_anchor = np.zeros(task.d) if mu0 is None else np.asarray(mu0, float).copy()
    phi_prev = task.exact_misfit(mu_anchor)
    rows, trace, ids, timings = [], [mu_anchor.copy()], [], []
    converged = False
    stage = 0
    mu_prior = mu_anchor
    for stage in range(1, config.k_max + 1):
        t0 = time.perf_counter()
        snap, lr, failures = _snapshot(params), config.vf_lr, 0
        while True:
            try:
                stage_rows = []
                for epoch in range(1, config.n_epochs + 1):
                    mu_post = estimate_posterior_mean(vf, config.m, rng_mean)
                    mu_prior = update_prior_mean(mu_post, mu_anchor, config.alpha)
                    loss = _train_epoch(vf, task.log_target(mu_prior), opt,
                                        config.steps_per_epoch, config.batch, rng_vf)
                    stage_rows.append({"stage": stage, "epoch": epoch, "vf_loss": loss,
                                       "e_I": task.inversion_error(mu_post)})
                break
            except NumericError as exc:
                failures += 1
                if failures > 1:
                    raise NumericError(f"stage {stage}: VF loss diverged twice "
                                       f"(lr {lr:g}); last error: {exc}") from exc
                lr *= 0.5
                log.warning("stage %d diverged (%s); restarting with lr %g", stage, exc, lr)
                _restore(params, snap)
                opt = dt.Adam(params, lr=lr)
        mu_anchor = mu_prior
        trace.append(mu_anchor.copy())
        phi_curr = task.exact_misfit(mu_anchor)
        stop = stopping_check(phi_prev, phi_curr, config.epsilon)
        stage_rows[-1]["phi_prior_exact"] = phi_curr
        stage_rows[-1]["e_S"] = task.fitting_error(config)
        rows.extend(stage_rows)
        log.info("stage %d: phi %.4g -> %.4g, e_I %.4f, e_S %.4f", stage, phi_prev, phi_curr,
                 stage_rows[-1]["e_I"], stage_rows[-1]["e_S"])
        if on_stage is not None:
            on_stage(stage_rows[-1])
        phi_prev = phi_curr
        if stop:
            converged = True
            timings.append(time.perf_counter() - t0)
            break
        data = build_stage_dataset(vf.sample, task, config.m, config.gamma, rng_data, stage)
        ids.append(data.ids)
        task.finetune(data, config, rng_fno)
        timings.append(time.perf_counter() - t0)
    rng_final = component_rng(seed, "final-samples")
    samples = vf.sample(config.final_samples, rng_final)
    return AdaptiveResult(samples.mean(axis=0), samples, rows, converged, stage, mu_anchor,
                          trace, ids, timings)


# -- surrogate-based baselines -------------------------------------------------

@dataclass(frozen=True)
class BaselineConfig:
    stages: int = 20
    uki_iters: int = 50
    svgd_iters: int = 50
    svgd_particles: int = 100
    svgd_step: float = 1e-2
    alpha: float = 0.5
    finetune: bool = True


def _gaussian_sampler(mean, cov):
    chol = np.linalg.cholesky(cov)

    def draw(n, rng):
        return mean + rng.standard_normal((n, mean.size)) @ chol.T

    return draw


def _particle_sampler(particles):
    def draw(n, rng):
        return particles[rng.integers(0, len(particles), size=n)]

    return draw


def run_uki_adaptive(task, loop: LoopConfig, base: BaselineConfig = BaselineConfig(),
                     seed: int = 0) -> AdaptiveResult:
    """UKI on the surrogate in stages, fine-tuning on perturbed draws from its Gaussian."""
    lik = task.problem.lik
    state = uki_init(lik.y, lik.sigma_eta, np.zeros(task.d), alpha=base.alpha)
    return _baseline_loop(task, loop, base, seed, "uki",
                          step=lambda: uki_step(state, task.surrogate_forward),
                          iters=base.uki_iters,
                          current=lambda: (state.mean.copy(),
                                           _gaussian_sampler(state.mean, state.cov)))


def run_svgd_adaptive(task, loop: LoopConfig, base: BaselineConfig = BaselineConfig(),
                      seed: int = 0) -> AdaptiveResult:
    """SVGD on the surrogate posterior (prior N(0, I)) with stage-wise fine-tuning."""
    init = component_rng(seed, "svgd-init").standard_normal((base.svgd_particles, task.d))
    ens = SvgdEnsemble(init, stepsize=base.svgd_step)
    grad = task.grad_log_target(np.zeros(task.d))
    return _baseline_loop(task, loop, base, seed, "svgd",
                          step=lambda: svgd_step(ens, grad), iters=base.svgd_iters,
                          current=lambda: (ens.particles.mean(axis=0),
                                           _particle_sampler(ens.particles.copy())),
                          samples=lambda: ens.particles.copy())


def _baseline_loop(task, loop, base, seed, tag, step, iters, current, samples=None):
    rng_data = component_rng(seed, f"{tag}-stage-data")
    rng_fno = component_rng(seed, f"{tag}-finetune")
    rows, ids, timings = [], [], []
    for stage in range(1, base.stages + 1):
        t0 = time.perf_counter()
        for _ in range(iters):
            step()
        mean, sampler = current()
        rows.append({"stage": stage, "epoch": iters, "vf_loss": None,
                     "phi_prior_exact": task.exact_misfit(mean),
                     "e_I": task.inversion_error(mean), "e_S": task.fitting_error(loop)})
        if base.finetune and stage < base.stages:
            data = build_stage_dataset(sampler, task, loop.m, loop.gamma, rng_data, stage)
            ids.append(data.ids)
            task.finetune(data, loop, rng_fno)
        timings.append(time.perf_counter() - t0)
    mean, sampler = current()
    draws = samples() if samples else sampler(loop.final_samples,
                                              component_rng(seed, f"{tag}-final"))
    return AdaptiveResult(mean, draws, rows, False, base.stages, mean, [], ids, timings)


def config_dict(config) -> dict:
    return asdict(config)
