"""Baseline posterior samplers."""
from .ensemble import (EnsembleResult, draw_stretch, ensemble_mcmc_run, stretch_log_factor,
                       stretch_proposal)
from .pcn import (PcnResult, PcnState, acceptance_probability, batch_means_stderr, pcn_init,
                  pcn_propose, pcn_run, pcn_step)
from .svgd import SvgdEnsemble, median_bandwidth, svgd_direction, svgd_run, svgd_step
from .uki import (UkiState, augment_with_prior, sigma_points, sigma_weights, uki_init,
                  uki_run, uki_step, unscented_mean)

__all__ = [
    "EnsembleResult", "draw_stretch", "ensemble_mcmc_run", "stretch_log_factor",
    "stretch_proposal", "PcnResult", "PcnState", "acceptance_probability",
    "batch_means_stderr", "pcn_init", "pcn_propose", "pcn_run", "pcn_step", "SvgdEnsemble",
    "median_bandwidth", "svgd_direction", "svgd_run", "svgd_step", "UkiState",
    "augment_with_prior", "sigma_points", "sigma_weights", "uki_init", "uki_run", "uki_step",
    "unscented_mean",
]
