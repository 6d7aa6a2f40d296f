"""Forward solvers, observation operators and likelihoods."""
from .darcy import darcy2d_source, solve_darcy1d, solve_darcy2d
from .ns import ns_forcing, solve_ns2d
from .observation import (Likelihood, ObservationOp, interior_lattice, load_observation,
                          log_unnorm_posterior, misfit, noisy_observation, observe,
                          save_observation)
from .problems import InverseProblem, LinearGaussianProblem, ProblemSpec

__all__ = [
    "darcy2d_source", "solve_darcy1d", "solve_darcy2d", "ns_forcing", "solve_ns2d",
    "Likelihood", "ObservationOp", "interior_lattice", "load_observation",
    "log_unnorm_posterior", "misfit", "noisy_observation", "observe", "save_observation",
    "InverseProblem", "LinearGaussianProblem", "ProblemSpec",
]
