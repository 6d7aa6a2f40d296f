"""Variational-flow Bayesian inversion with adaptive neural-operator surrogates."""

__version__ = "0.1.0"
