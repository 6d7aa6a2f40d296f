"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np

from . import core as dt


def numeric_grad(fn, arrays, step=1e-5):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn(*arrays))
            flat[i] = orig - step
            fm = float(fn(*arrays))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


def autodiff_grad(build, arrays):
    """Reverse-mode gradient of ``build(*tensors)`` w.r.t. each array."""
    leaves = [dt.variable(a) for a in arrays]
    with dt.Tape():
        out = build(*leaves)
        return dt.grad_of(out, leaves)


def relative_error(a, b):
    """max|a-b| / max(max|a|, max|b|, tiny): scale-aware, robust to zeros."""
    a = np.asarray(a)
    b = np.asarray(b)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def check_gradients(build, arrays, step=1e-5):
    """Largest relative error between autodiff and finite differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ad = autodiff_grad(build, arrays)

    def fn(*xs):
        return build(*[dt.Tensor(x) for x in xs]).item()

    fd = numeric_grad(fn, arrays, step)
    return max(relative_error(x, y) for x, y in zip(ad, fd))


def check_param_gradients(loss_fn, params, step=1e-5):
    """Compare backward() against central differences taken in place on ``params``.

    ``loss_fn()`` must rebuild the scalar loss from the current parameter values.
    """
    with dt.Tape():
        dt.backward(loss_fn(), params)
    ad = [p.grad.copy() for p in params]
    fd = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_fn().item()
            flat[i] = orig - step
            fm = loss_fn().item()
            flat[i] = orig
            g.reshape(-1)[i] = (fp - fm) / (2 * step)
        fd.append(g)
    return relative_error(np.concatenate([a.ravel() for a in ad]),
                          np.concatenate([b.ravel() for b in fd]))
