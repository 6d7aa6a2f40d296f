"""Eager reverse-mode differentiation over dense numpy arrays.

Operations execute immediately. While a :class:`Tape` is active, every
operation with at least one input that requires a gradient is appended to
the tape; :func:`backward` then walks the tape in reverse insertion order.

Complex tensors use the convention that the adjoint of ``z`` is
``dL/dRe(z) + 1j * dL/dIm(z)`` for a real loss ``L``. With that convention
the adjoint of a complex-linear map is its conjugate transpose, and the
real case falls out unchanged.
"""
from __future__ import annotations

import numpy as np
from scipy import special

from ..errors import NumericError, ShapeError

_TAPES: list["Tape"] = []


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._leaf_index: dict[int, int] = {}

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def _record(self, t):
        t._tape = self
        t._index = len(self.nodes)
        self.nodes.append(t)

    def _leaf(self, t):
        key = id(t)
        if key not in self._leaf_index:
            self._leaf_index[key] = len(self.nodes)
            self.nodes.append(t)
        return self._leaf_index[key]

    def index(self, t):
        if t._tape is self:
            return t._index
        return self._leaf_index.get(id(t))


def active_tape():
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """A dense array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "kind", "_parents", "_backward",
                 "_tape", "_index", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype.kind in "biuf":
            arr = arr.astype(np.float64, copy=False)
        elif arr.dtype.kind == "c":
            arr = arr.astype(np.complex128, copy=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.kind = "leaf"
        self._parents = ()
        self._backward = None
        self._tape = None
        self._index = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_complex(self):
        return self.data.dtype.kind == "c"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, kind={self.kind})"

    def __len__(self):
        return len(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        if p == 0.5:
            return sqrt(self)
        raise NotImplementedError("only powers 2 and 0.5 are supported")

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class Param(Tensor):
    """A trainable leaf with a persistent gradient buffer."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name="param"):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    """Wrap data as a tensor that never receives a gradient."""
    return Tensor(x.data if isinstance(x, Tensor) else x)


def _make(data, parents, back, kind):
    tape = active_tape()
    if tape is None or not any(p.requires_grad for p in parents):
        out = Tensor(data)
        out.kind = kind
        return out
    out = Tensor(data, requires_grad=True)
    out.kind = kind
    out._parents = parents
    out._backward = back
    for p in parents:
        if p.requires_grad and p._tape is not tape:
            tape._leaf(p)
    tape._record(out)
    return out


def _conj(x):
    return np.conj(x) if np.iscomplexobj(x) else x


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _real_like(g, ref):
    # gradient flowing into a real input from a complex expression
    if np.iscomplexobj(g) and not np.iscomplexobj(ref):
        return g.real
    return g


def _check_broadcast(a, b, kind):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def _check_finite(arr, kind):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{kind} produced non-finite values")


# elementwise binary ----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def back(g):
        return (_real_like(_unbroadcast(g, a.shape), a.data) if a.requires_grad else None,
                _real_like(_unbroadcast(g, b.shape), b.data) if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), back, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        return (_real_like(_unbroadcast(g, a.shape), a.data) if a.requires_grad else None,
                _real_like(_unbroadcast(-g, b.shape), b.data) if b.requires_grad else None)

    return _make(a.data - b.data, (a, b), back, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _real_like(_unbroadcast(g * _conj(b.data), a.shape), a.data)
        if b.requires_grad:
            gb = _real_like(_unbroadcast(g * _conj(a.data), b.shape), b.data)
        return ga, gb

    return _make(a.data * b.data, (a, b), back, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    _check_finite(out, "div")

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _real_like(_unbroadcast(g / _conj(b.data), a.shape), a.data)
        if b.requires_grad:
            gb = _real_like(_unbroadcast(-g * _conj(out / b.data), b.shape), b.data)
        return ga, gb

    return _make(out, (a, b), back, "div")


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


# elementwise unary -----------------------------------------------------------

def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    _check_finite(out, "exp")
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    _check_finite(out, "log")
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    a = as_tensor(a)
    out = special.expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _make(out, (a,), lambda g: (g * special.expit(a.data),), "softplus")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))

    def back(g):
        return (g * (cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)),)

    return _make(x * cdf, (a,), back, "gelu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu_tanh(a):
    """GELU with the tanh approximation; cheaper than the erf form."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * x * (1.0 + 0.044715 * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), back, "gelu_tanh")


def square(a):
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a):
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    _check_finite(out, "sqrt")

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
        return (g * d,)

    return _make(out, (a,), back, "sqrt")


def abs_(a):
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


# reductions and shape ops ----------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    if axis is not None:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % a.ndim for ax in axes)
        for ax in axes:
            if ax >= a.ndim:
                raise ShapeError(f"sum: axis {ax} out of range for shape {a.shape}")

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i, j):
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, i, j), (a,),
                 lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def getitem(a, idx):
    a = as_tensor(a)
    out = a.data[idx]

    basic = _is_basic_index(idx)

    def back(g):
        full = np.zeros(a.shape, dtype=np.result_type(g, a.data))
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), back, "slice")


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, np.integer)) or p is Ellipsis or p is None
               for p in parts)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def back(g):
        grads = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                grads.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            grads.append(_real_like(g[tuple(sl)], t.data))
        return tuple(grads)

    return _make(out, tuple(tensors), back, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                   for t in tensors], axis=axis)


# linear algebra --------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires operands with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    if b.ndim == 2 and a.ndim > 2:
        return _matmul_flat(a, b)
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _real_like(_unbroadcast(np.matmul(g, _conj(np.swapaxes(b.data, -1, -2))),
                                         a.shape), a.data)
        if b.requires_grad:
            gb = _real_like(_unbroadcast(np.matmul(_conj(np.swapaxes(a.data, -1, -2)), g),
                                         b.shape), b.data)
        return ga, gb

    return _make(out, (a, b), back, "matmul")


def _matmul_flat(a, b):
    """Batched-by-weight product as one 2D GEMM (the common dense-layer case)."""
    lead = a.shape[:-1]
    a2 = a.data.reshape(-1, a.shape[-1])
    out = (a2 @ b.data).reshape(lead + (b.shape[-1],))

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        ga = gb = None
        if a.requires_grad:
            ga = _real_like((g2 @ _conj(b.data).T).reshape(a.shape), a.data)
        if b.requires_grad:
            gb = _real_like(_conj(a2).T @ g2, b.data)
        return ga, gb

    return _make(out, (a, b), back, "matmul")


def einsum(spec, a, b):
    """Two-operand einsum without implicit broadcasting.

    Every index of each operand must appear in the output or the other
    operand, which keeps the adjoints expressible as einsums too.
    """
    a, b = as_tensor(a), as_tensor(b)
    ins, out_sub = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        for c in s:
            if c not in out_sub and c not in other:
                raise ShapeError(f"einsum: index {c!r} is summed within a single operand")
    try:
        out = np.einsum(spec, a.data, b.data, optimize=True)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _real_like(np.einsum(f"{out_sub},{sb}->{sa}", g, _conj(b.data), optimize=True),
                            a.data)
        if b.requires_grad:
            gb = _real_like(np.einsum(f"{sa},{out_sub}->{sb}", _conj(a.data), g, optimize=True),
                            b.data)
        return ga, gb

    return _make(out, (a, b), back, "einsum")


# complex and spectral --------------------------------------------------------

def as_complex(a):
    """Interpret a real tensor whose last axis has length 2 as (re, im)."""
    a = as_tensor(a)
    if a.shape[-1] != 2:
        raise ShapeError("as_complex expects a trailing axis of length 2")
    out = a.data[..., 0] + 1j * a.data[..., 1]
    return _make(out, (a,), lambda g: (np.stack([g.real, g.imag], axis=-1),), "complex")


def real(a):
    a = as_tensor(a)
    return _make(a.data.real.copy(), (a,), lambda g: (g.astype(np.complex128),), "real")


def rfft(a, axes=(-1,)):
    """Real-to-complex FFT over ``axes``; the last listed axis is halved."""
    a = as_tensor(a)
    axes = tuple(ax % a.ndim for ax in axes)
    n = [a.shape[ax] for ax in axes]
    out = np.fft.rfftn(a.data, axes=axes)

    # The adjoint is Re(ifftn) of the zero-extended spectrum. Halving the interior
    # one-sided bins turns that into a plain real inverse transform.
    half = np.full(out.shape[axes[-1]], 0.5)
    half[0] = 1.0
    if n[-1] % 2 == 0:
        half[-1] = 1.0
    hshape = [1] * a.ndim
    hshape[axes[-1]] = half.size
    half = half.reshape(hshape) * float(np.prod(n))

    def back(g):
        return (np.fft.irfftn(g * half, s=n, axes=axes),)

    return _make(out, (a,), back, "rfft")


def irfft(a, sizes, axes=(-1,)):
    """Complex-to-real inverse FFT with output lengths ``sizes`` over ``axes``.

    The last axis of the input may be shorter than ``sizes[-1] // 2 + 1``;
    missing high frequencies are treated as zero.
    """
    a = as_tensor(a)
    axes = tuple(ax % a.ndim for ax in axes)
    sizes = tuple(int(s) for s in sizes)
    last = axes[-1]
    kept = a.shape[last]
    nlast = sizes[-1]
    if kept > nlast // 2 + 1:
        raise ShapeError("irfft: more frequencies than the output length supports")
    full_len = nlast // 2 + 1
    if kept < full_len:
        pad = [(0, 0)] * a.ndim
        pad[last] = (0, full_len - kept)
        spec = np.pad(a.data, pad)
    else:
        spec = a.data
    for ax, s in zip(axes[:-1], sizes[:-1]):
        if a.shape[ax] != s:
            raise ShapeError("irfft: leading transform axes must be full length")
    out = np.fft.irfftn(spec, s=sizes, axes=axes)

    weight = np.full(full_len, 2.0)
    weight[0] = 1.0
    if nlast % 2 == 0:
        weight[-1] = 1.0
    wshape = [1] * a.ndim
    wshape[last] = full_len
    weight = (weight / float(np.prod(sizes))).reshape(wshape)

    def back(g):
        G = np.fft.rfftn(g, axes=axes) * weight
        sl = [slice(None)] * G.ndim
        sl[last] = slice(0, kept)
        return (G[tuple(sl)],)

    return _make(out, (a,), back, "irfft")


# helpers ---------------------------------------------------------------------

def zeros(shape, dtype=np.float64):
    return Tensor(np.zeros(shape, dtype=dtype))


def backward(root, params=None):
    """Propagate adjoints from a scalar ``root`` to every leaf on its tape.

    Params passed in ``params`` have their ``grad`` overwritten: reachable
    ones receive d(root)/d(param), the rest receive zeros. Params that are
    reachable but not listed are overwritten as well.
    """
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if params is not None:
        for p in params:
            p.grad = np.zeros_like(p.data)
    tape = root._tape
    if tape is None:
        return
    nodes = tape.nodes
    adj = [None] * len(nodes)
    adj[root._index] = np.ones_like(root.data)
    for i in range(root._index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        node = nodes[i]
        if node._backward is None:
            continue
        grads = node._backward(g)
        for p, pg in zip(node._parents, grads):
            if pg is None or not p.requires_grad:
                continue
            j = tape.index(p)
            if adj[j] is None:
                adj[j] = pg
            else:
                adj[j] = adj[j] + pg
    for i, node in enumerate(nodes):
        if isinstance(node, Param) and node._tape is not tape:
            node.grad = np.zeros_like(node.data) if adj[i] is None else np.array(adj[i], dtype=np.float64)
    return adj


def grad_of(root, wrt):
    """Adjoints of a scalar ``root`` with respect to arbitrary tensors ``wrt``."""
    adj = backward(root)
    tape = root._tape
    out = []
    for t in wrt:
        j = None if tape is None else tape.index(t)
        if j is None or adj is None or adj[j] is None:
            out.append(np.zeros_like(t.data))
        else:
            out.append(np.asarray(adj[j]))
    return out


def variable(x):
    """A differentiable leaf that is not a parameter (e.g. an input field)."""
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)
