"""Benchmark targets, scoring and the experiment matrix."""
from ..metrics import coefficient_inversion_error, inversion_error
from .matrix import Cell, cells, run_matrix, summarize
from .rosenbrock import (DIM, banana_forward, mode_centers, mode_coverage, mode_separation,
                         rosenbrock_grad, rosenbrock_logp, rosenbrock_logp_tensor)

__all__ = ["coefficient_inversion_error", "inversion_error", "Cell", "cells", "run_matrix",
           "summarize", "DIM", "banana_forward", "mode_centers", "mode_coverage",
           "mode_separation", "rosenbrock_grad", "rosenbrock_logp", "rosenbrock_logp_tensor"]
