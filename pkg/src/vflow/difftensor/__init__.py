"""Minimal reverse-mode automatic differentiation on numpy arrays."""
from .core import (Param, Tape, Tensor, abs_, active_tape, add, as_complex, as_tensor,
                   backward, broadcast_to, concat, constant, div, einsum, exp, gelu,
                   gelu_tanh,
                   getitem, grad_of, irfft, log, matmul, mean, mul, neg, real, reshape,
                   rfft, sigmoid, softplus, sqrt, square, stack, sub, sum_, swapaxes, tanh,
                   transpose, variable, zeros)
from .io import decode_params, encode_params, load_params, save_params
from .nn import MLP, Linear, count_params
from .optim import Adam, AdamState, StepDecay, adam_step

__all__ = [
    "Param", "Tape", "Tensor", "abs_", "active_tape", "add", "as_complex", "as_tensor",
    "backward", "broadcast_to", "concat", "constant", "div", "einsum", "exp", "gelu", "gelu_tanh",
    "getitem", "grad_of", "irfft", "log", "matmul", "mean", "mul", "neg", "real",
    "reshape", "rfft", "sigmoid", "softplus", "sqrt", "square", "stack", "sub", "sum_",
    "swapaxes", "tanh", "transpose", "variable", "zeros",
    "decode_params", "encode_params", "load_params", "save_params",
    "MLP", "Linear", "count_params", "Adam", "AdamState", "StepDecay", "adam_step",
]
