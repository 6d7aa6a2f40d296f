"""End-to-end runs built from a resolved RunConfig: pretraining, inversion by any
method, Rosenbrock sampling, and the deterministic CSV artifacts they produce."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import difftensor as dt
from . import randfield as rf
from .adaptive import (AdaptiveResult, LinearTask, PdeTask, run_adaptive, run_svgd_adaptive,
                       run_uki_adaptive, stage_log_csv)
from .bench import rosenbrock as rb
from .config import RunConfig
from .forward import InverseProblem, ProblemSpec
from .samplers import (SvgdEnsemble, augment_with_prior, ensemble_mcmc_run, pcn_run, svgd_run,
                       uki_init, uki_run)
from .seeding import component_rng
from .surrogate import FnoModel, fno_pretrain
from .vfmodel import VaeBaseline, VfModel, train_on_target

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("problem", "method", "d", "delta", "repeat", "e_I", "e_S_final",
                  "stages_run", "converged")


# -- CSV helpers ---------------------------------------------------------------

def fmt(v) -> str:
    """Shortest round-trip text for numbers; blanks for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def samples_csv(samples: np.ndarray, names=None) -> str:
    names = names or [f"xi_{j + 1}" for j in range(samples.shape[1])]
    return csv_text(names, samples.tolist())


def read_csv_rows(text: str) -> list:
    return list(csv.DictReader(io.StringIO(text)))


# -- problems and surrogates ---------------------------------------------------

def build_problem(cfg: RunConfig) -> InverseProblem:
    return InverseProblem(ProblemSpec(cfg.problem, cfg.d, cfg.delta, cfg.grid, cfg.seed,
                                      surrogate_grid=cfg.surrogate_grid))


def new_fno(cfg: RunConfig, problem: InverseProblem) -> FnoModel:
    return FnoModel(problem.surrogate_basis.grid_shape, cfg.fno,
                    component_rng(cfg.seed, "fno-init"), problem.periodic)


@dataclass
class PretrainOutput:
    model: FnoModel
    inputs: np.ndarray
    outputs: np.ndarray
    history: list


def pretrain(cfg: RunConfig, problem: InverseProblem) -> PretrainOutput:
    """Prior dataset from N(0, I) coefficients and an FNO fitted to it."""
    pc = cfg.pretrain
    xi = component_rng(cfg.seed, "pretrain-data").standard_normal((pc.dataset_size, cfg.d))
    inputs = rf.synthesize(problem.surrogate_basis, xi)
    outputs = problem.exact_states(xi)
    model = new_fno(cfg, problem)
    history = fno_pretrain(model, inputs, outputs, epochs=pc.epochs, batch=pc.batch, lr=pc.lr,
                           halve_every=pc.halve_every,
                           rng=component_rng(cfg.seed, "pretrain-shuffle"))
    return PretrainOutput(model, inputs, outputs, history)


def load_fno(cfg: RunConfig, problem: InverseProblem, path) -> FnoModel:
    model = new_fno(cfg, problem)
    dt.load_params(path, model.state())
    return model


# -- inversion methods ---------------------------------------------------------

@dataclass
class InversionOutput:
    mu_post: np.ndarray
    samples: np.ndarray
    stage_log: str
    e_I: float
    e_S_final: float | None
    stages_run: int
    converged: bool
    extras: dict = field(default_factory=dict)

    def report_row(self, cfg: RunConfig) -> tuple:
        return (cfg.problem, cfg.method, cfg.d, cfg.delta, cfg.seed, self.e_I, self.e_S_final,
                self.stages_run, self.converged)


def _from_adaptive(res: AdaptiveResult, task) -> InversionOutput:
    last = res.rows[-1] if res.rows else {}
    return InversionOutput(res.mu_post, res.samples, res.csv(), task.inversion_error(res.mu_post),
                           last.get("e_S"), res.stages_run, res.converged,
                           {"timings": res.timings})


def invert(cfg: RunConfig, problem: InverseProblem, model: FnoModel | None) -> InversionOutput:
    method = cfg.method
    if method == "ours":
        task = PdeTask(problem, model, cfg.seed)
        vf = VfModel(cfg.d, cfg.vf, component_rng(cfg.seed, "vf-init"))
        return _from_adaptive(run_adaptive(task, vf, cfg.loop, cfg.seed), task)
    if method == "uki-fno":
        task = PdeTask(problem, model, cfg.seed)
        return _from_adaptive(run_uki_adaptive(task, cfg.loop, cfg.baseline, cfg.seed), task)
    if method == "svgd-fno":
        task = PdeTask(problem, model, cfg.seed)
        return _from_adaptive(run_svgd_adaptive(task, cfg.loop, cfg.baseline, cfg.seed), task)
    if method == "pcn":
        pc = cfg.pcn
        res = pcn_run(problem.misfit, np.zeros(cfg.d), pc.iters, pc.beta, pc.burn, pc.thin,
                      component_rng(cfg.seed, "pcn"))
        e_i = _e_i(problem, res.mean)
        text = stage_log_csv([{"stage": 1, "epoch": pc.iters, "e_I": e_i,
                               "phi_prior_exact": float(problem.misfit(res.mean))}])
        return InversionOutput(res.mean, res.samples, text, e_i, None, 1, True,
                               {"acceptance_rate": res.acceptance_rate})
    if method == "uki-fdm":
        return _uki_exact(cfg, problem)
    raise ValueError(method)


def _e_i(problem, mu):
    from .metrics import inversion_error
    return inversion_error(mu, problem.xi_ref, problem.basis_ref)


def _uki_exact(cfg: RunConfig, problem: InverseProblem) -> InversionOutput:
    lik = problem.lik
    state = uki_init(lik.y, lik.sigma_eta, np.zeros(cfg.d), cfg.uki.alpha,
                     sigma_nu_factor=cfg.uki.sigma_nu_factor)
    rows = []

    def record(it, st):
        rows.append({"stage": it + 1, "epoch": 1, "e_I": _e_i(problem, st.mean),
                     "phi_prior_exact": float(problem.misfit(st.mean))})

    uki_run(problem.forward, state, cfg.uki.iters, callback=record)
    draws = state.mean + component_rng(cfg.seed, "uki-final").standard_normal(
        (cfg.loop.final_samples, cfg.d)) @ np.linalg.cholesky(state.cov).T
    return InversionOutput(state.mean.copy(), draws, stage_log_csv(rows),
                           _e_i(problem, state.mean), None, cfg.uki.iters, False)


# -- Rosenbrock ------------------------------------------------------------------

@dataclass
class RosenbrockOutput:
    samples: np.ndarray
    centers: np.ndarray
    coverage: np.ndarray
    extras: dict = field(default_factory=dict)


def pick_rows(samples: np.ndarray, n: int) -> np.ndarray:
    """Exactly ``n`` rows spread evenly over ``samples`` (cycling when there are fewer)."""
    idx = np.floor(np.arange(n) * (len(samples) / n)).astype(int) if len(samples) >= n \
        else np.arange(n) % len(samples)
    return samples[idx]


def rosenbrock_reference(cfg: RunConfig) -> np.ndarray:
    rc = cfg.rosenbrock
    rng = component_rng(cfg.seed, "rosenbrock-mcmc")
    init = 0.1 * rng.standard_normal((rc.mcmc_walkers, rb.DIM))
    res = ensemble_mcmc_run(rb.rosenbrock_logp, init, rc.mcmc_burn, rc.mcmc_steps, rng)
    return pick_rows(res.samples, rc.samples)


def rosenbrock_samples(cfg: RunConfig, method: str) -> tuple:
    rc = cfg.rosenbrock
    if method == "mcmc":
        return rosenbrock_reference(cfg), {}
    if method in ("vf", "vae"):
        rng = component_rng(cfg.seed, f"rosenbrock-{method}")
        if method == "vf":
            model = VfModel(rb.DIM, cfg.vf, rng)
        else:
            vc = cfg.vf
            model = VaeBaseline(rb.DIM, vc.latent, vc.subnet_hidden, vc.subnet_depth,
                                vc.decoder_hidden, vc.decoder_depth, rng)
        steps = rc.epochs * max(1, rc.train_samples // rc.batch)
        opt = dt.Adam(model.params(), lr=rc.lr)
        losses = train_on_target(model, rb.rosenbrock_logp_tensor, steps, rc.batch, opt, rng)
        return model.sample(rc.samples, rng), {"final_loss": float(np.mean(losses[-50:])),
                                               "params": dt.count_params(model.params())}
    if method == "svgd":
        rng = component_rng(cfg.seed, "rosenbrock-svgd")
        ens = SvgdEnsemble(rng.standard_normal((rc.svgd_particles, rb.DIM)))
        svgd_run(ens, lambda x: rb.rosenbrock_grad(x), rc.svgd_iters)
        return pick_rows(ens.particles, rc.samples), {}
    if method == "uki":
        mean, cov = rosenbrock_uki(rc.uki_iters)
        rng = component_rng(cfg.seed, "rosenbrock-uki")
        draws = mean + rng.standard_normal((rc.samples, rb.DIM)) @ np.linalg.cholesky(cov).T
        return draws, {}
    raise ValueError(method)


def rosenbrock_uki(iters: int):
    """UKI on the stacked residual [F(x1, x2) - y; x_c - K x] with alpha = 1 and r0 = 0."""

    def forward(pts):
        f = rb.banana_forward(pts[:, 0], pts[:, 1])
        coupling = pts[:, 2:] - pts.sum(axis=1, keepdims=True)
        return np.hstack([f, coupling])

    y = np.concatenate([rb.DATA, np.zeros(rb.DIM - 2)])
    state = uki_init(y, np.eye(y.size), np.zeros(rb.DIM), alpha=1.0)
    uki_run(forward, state, iters)
    return state.mean, state.cov


def run_rosenbrock(cfg: RunConfig) -> RosenbrockOutput:
    rc = cfg.rosenbrock
    reference = rosenbrock_reference(cfg)
    centers = rb.mode_centers(reference[:, :2], seed=cfg.seed)
    samples, extras = (reference, {}) if rc.method == "mcmc" else rosenbrock_samples(cfg, rc.method)
    coverage = rb.mode_coverage(samples[:, :2], centers, rc.coverage_radius)
    return RosenbrockOutput(samples, centers, coverage, extras)


def linear_task(problem) -> LinearTask:
    return LinearTask(problem)


def augmented_uki_mean(problem, iters: int = 200) -> np.ndarray:
    """UKI with the prior appended as observations (alpha = 1) on a linear problem."""
    fwd, y_aug, cov = augment_with_prior(problem.forward, problem.lik.y, problem.lik.noise_std,
                                         problem.prior_mean)
    state = uki_init(y_aug, cov, problem.prior_mean, alpha=1.0)
    return uki_run(fwd, state, iters).mean
