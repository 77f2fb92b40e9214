"""Reverse-mode tape over numpy arrays.

Small on purpose: the only primitives are the ones the network forward pass,
the input-jet propagation, and the loss assembly need (broadcast arithmetic,
a last-axis linear map, the SiLU derivative family, indexing, reductions).
Functions dispatch on argument type, so the same numerical code runs either
untaped on raw ndarrays (fast path, no gradients) or taped on Var wrappers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class Tape:
    """Records operations; backward() accumulates adjoints in reverse order."""

    def __init__(self):
        self.nodes = []  # (out_index, parent_indices, backward_fn)
        self.n_vars = 0

    def new_var(self, value) -> "Var":
        v = Var(np.asarray(value, dtype=np.float64), self, self.n_vars)
        self.n_vars += 1
        return v

    def record(self, value, parents, backward_fn) -> "Var":
        out = self.new_var(value)
        self.nodes.append((out.index, tuple(p.index for p in parents), backward_fn))
        return out

    def backward(self, loss: "Var") -> dict:
        """Adjoint of every recorded Var w.r.t. the scalar loss, by index."""
        grads = {loss.index: np.ones_like(loss.value)}
        for out_idx, parent_idxs, fn in reversed(self.nodes):
            g = grads.pop(out_idx, None)
            if g is None:
                continue
            for pidx, contrib in zip(parent_idxs, fn(g)):
                if contrib is None:
                    continue
                if pidx in grads:
                    grads[pidx] = grads[pidx] + contrib
                else:
                    grads[pidx] = contrib
        return grads


class Var:
    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

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

    def __neg__(self):
        return mul(self, -1.0)


def _is_var(x):
    return isinstance(x, Var)


def _val(x):
    return x.value if _is_var(x) else x


def _tape_of(*args):
    for a in args:
        if _is_var(a):
            return a.tape
    return None


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    tape = _tape_of(a, b)
    out = _val(a) + _val(b)
    if tape is None:
        return out
    av, bv = _val(a), _val(b)
    parents = [x for x in (a, b) if _is_var(x)]

    def backward(g):
        res = []
        if _is_var(a):
            res.append(_unbroadcast(g, np.shape(av)))
        if _is_var(b):
            res.append(_unbroadcast(g, np.shape(bv)))
        return res

    return tape.record(out, parents, backward)


def sub(a, b):
    return add(a, mul(b, -1.0))


def mul(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = av * bv
    if tape is None:
        return out
    parents = [x for x in (a, b) if _is_var(x)]

    def backward(g):
        res = []
        if _is_var(a):
            res.append(_unbroadcast(g * bv, np.shape(av)))
        if _is_var(b):
            res.append(_unbroadcast(g * av, np.shape(bv)))
        return res

    return tape.record(out, parents, backward)


def linmap(x, w):
    """y[..., j] = sum_i x[..., i] * w[j, i] — an affine layer minus its bias."""
    tape = _tape_of(x, w)
    xv, wv = _val(x), _val(w)
    out = xv @ wv.T
    if tape is None:
        return out
    parents = [v for v in (x, w) if _is_var(v)]

    def backward(g):
        res = []
        if _is_var(x):
            res.append(g @ wv)
        if _is_var(w):
            g2 = g.reshape(-1, g.shape[-1])
            x2 = xv.reshape(-1, xv.shape[-1])
            res.append(g2.T @ x2)
        return res

    return tape.record(out, parents, backward)


def _sigmoid(z):
    return expit(z)


def silu_d(z, order):
    """SiLU and its derivatives: order 0 is z*sigmoid(z), 1..3 the derivatives."""
    s = _sigmoid(z)
    if order == 0:
        return z * s
    t = s * (1.0 - s)
    if order == 1:
        return s + z * t
    if order == 2:
        return 2.0 * t + z * t * (1.0 - 2.0 * s)
    if order == 3:
        return 3.0 * t * (1.0 - 2.0 * s) + z * t * (1.0 - 6.0 * s + 6.0 * s * s)
    raise ValueError(f"silu derivative order {order} not implemented")


def silu(x, order=0):
    tape = _tape_of(x)
    xv = _val(x)
    out = silu_d(xv, order)
    if tape is None:
        return out

    def backward(g):
        return [g * silu_d(xv, order + 1)]

    return tape.record(out, [x], backward)


def sin_d(z, order):
    return np.sin(z + order * (np.pi / 2.0))


def sin(x, order=0):
    tape = _tape_of(x)
    xv = _val(x)
    out = sin_d(xv, order)
    if tape is None:
        return out

    def backward(g):
        return [g * sin_d(xv, order + 1)]

    return tape.record(out, [x], backward)


def take(x, key):
    """Indexing x[key]; the adjoint scatters back into the source shape."""
    tape = _tape_of(x)
    xv = _val(x)
    out = xv[key]
    if tape is None:
        return out
    shape = xv.shape

    def backward(g):
        full = np.zeros(shape)
        full[key] = g
        return [full]

    return tape.record(out, [x], backward)


def reshape(x, shape):
    tape = _tape_of(x)
    xv = _val(x)
    out = xv.reshape(shape)
    if tape is None:
        return out
    orig = xv.shape

    def backward(g):
        return [g.reshape(orig)]

    return tape.record(out, [x], backward)


def vsum(x):
    """Sum to a scalar."""
    tape = _tape_of(x)
    xv = _val(x)
    out = xv.sum()
    if tape is None:
        return out
    shape = xv.shape

    def backward(g):
        return [np.broadcast_to(g, shape) if np.ndim(g) else np.full(shape, g)]

    return tape.record(out, [x], backward)


def vmean(x):
    n = np.size(_val(x))
    return mul(vsum(x), 1.0 / n)


def square(x):
    return mul(x, x)
