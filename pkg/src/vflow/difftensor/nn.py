"""Small dense networks built from difftensor primitives."""
from __future__ import annotations

import numpy as np

from . import core as dt

ACTIVATIONS = {"tanh": dt.tanh, "gelu": dt.gelu, "gelu_tanh": dt.gelu_tanh, "softplus": dt.softplus}


class Linear:
    def __init__(self, n_in, n_out, rng, name, zero=False):
        if zero:
            w = np.zeros((n_in, n_out))
        else:
            bound = np.sqrt(6.0 / (n_in + n_out)) if n_in > 0 else 0.0
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.weight = dt.Param(w, f"{name}.weight")
        self.bias = dt.Param(np.zeros(n_out), f"{name}.bias")

    def __call__(self, x):
        return dt.matmul(x, self.weight) + self.bias

    def params(self):
        return [self.weight, self.bias]


class MLP:
    """``sizes[0] -> ... -> sizes[-1]`` with an activation between layers.

    With ``zero_last`` the output layer starts at exactly zero.
    """

    def __init__(self, sizes, rng, name, activation="tanh", zero_last=False):
        self.sizes = list(sizes)
        self.act = ACTIVATIONS[activation]
        n = len(sizes) - 1
        self.layers = [Linear(sizes[i], sizes[i + 1], rng, f"{name}.{i}",
                              zero=zero_last and i == n - 1)
                       for i in range(n)]

    def __call__(self, x):
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = self.act(h)
        return h

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


def count_params(params):
    return int(sum(p.size for p in params))
