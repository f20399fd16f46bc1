"""Reverse-mode automatic differentiation on numpy arrays.

Values are ordinary ``ndarray`` objects wrapped in :class:`Var` nodes that
record a vector-Jacobian product for each parent.  Module-level functions
(``log``, ``inv``, ``cholesky``, ...) dispatch on their argument: on plain
arrays they are thin aliases of numpy/scipy, on :class:`Var` they record.
Code written against this module therefore runs unchanged with or without
differentiation, and the primal values are computed by the same numpy calls
in both cases.

Example
-------
>>> import numpy as np
>>> from varorder import autodiff as ad
>>> value, grad = ad.gradient(lambda x: ad.sum(x * x), np.array([1.0, 2.0]))
>>> value, grad.tolist()
(5.0, [2.0, 4.0])
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg

log_ = logging.getLogger(__name__)

__all__ = [
    "Var", "Tape", "gradient", "trace_call", "locate_nonfinite",
    "value_of", "is_var",
    "log", "exp", "sqrt", "sum", "reshape", "transpose", "diagonal", "trace",
    "inv", "solve", "cholesky", "solve_triangular", "concatenate", "stack",
    "symmetrize", "outer",
]


class Tape:
    """Linear record of nodes in evaluation order."""

    def __init__(self):
        self.nodes = []

    def record(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1

    def first_nonfinite(self):
        """Return ``(index, op)`` of the earliest node holding inf/nan, or None."""
        for node in self.nodes:
            if not np.all(np.isfinite(node.value)):
                return node.index, node.op
        return None

    def backward(self, out):
        grads = [None] * (out.index + 1)
        grads[out.index] = np.ones_like(out.value, dtype=float)
        for node in reversed(self.nodes[: out.index + 1]):
            g = grads[node.index]
            if g is None:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(g)
                prev = grads[parent.index]
                grads[parent.index] = contrib if prev is None else prev + contrib
        return grads


class Var:
    __slots__ = ("value", "tape", "parents", "index", "op")
    __array_ufunc__ = None

    def __init__(self, value, tape, parents=(), op="input"):
        self.value = np.asarray(value, dtype=float) if not np.isscalar(value) else float(value)
        self.tape = tape
        self.parents = parents
        self.op = op
        self.index = tape.record(self)

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={np.shape(self.value)})"

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.value)

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, _neg(other))

    def __rsub__(self, other):
        return _add(other, _neg(self))

    def __neg__(self):
        return _neg(self)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __matmul__(self, other):
        return _matmul(self, other)

    def __rmatmul__(self, other):
        return _matmul(other, self)

    def __pow__(self, k):
        if k == 2:
            return _mul(self, self)
        if k == 0.5:
            return sqrt(self)
        raise NotImplementedError("only squares and square roots are registered")

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def is_var(x):
    return isinstance(x, Var)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _node(value, op, *pairs):
    parents = tuple((p, f) for p, f in pairs if isinstance(p, Var))
    return Var(value, _tape_of(*(p for p, _ in pairs)), parents, op)


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic -------------------------------------------------

def _add(x, y):
    xv, yv = value_of(x), value_of(y)
    out = xv + yv
    if not (is_var(x) or is_var(y)):
        return out
    xs, ys = np.shape(xv), np.shape(yv)
    return _node(out, "add",
                 (x, lambda g: _unbroadcast(g, xs)),
                 (y, lambda g: _unbroadcast(g, ys)))


def _neg(x):
    if not is_var(x):
        return -x
    return _node(-x.value, "neg", (x, lambda g: -g))


def _mul(x, y):
    xv, yv = value_of(x), value_of(y)
    out = xv * yv
    if not (is_var(x) or is_var(y)):
        return out
    xs, ys = np.shape(xv), np.shape(yv)
    return _node(out, "mul",
                 (x, lambda g: _unbroadcast(g * yv, xs)),
                 (y, lambda g: _unbroadcast(g * xv, ys)))


def _div(x, y):
    xv, yv = value_of(x), value_of(y)
    out = xv / yv
    if not (is_var(x) or is_var(y)):
        return out
    xs, ys = np.shape(xv), np.shape(yv)
    return _node(out, "div",
                 (x, lambda g: _unbroadcast(g / yv, xs)),
                 (y, lambda g: _unbroadcast(-g * out / yv, ys)))


def _matmul(x, y):
    xv, yv = value_of(x), value_of(y)
    out = xv @ yv
    if not (is_var(x) or is_var(y)):
        return out

    def gx(g):
        if np.ndim(yv) == 1:
            return np.outer(g, yv) if np.ndim(xv) == 2 else g * yv
        return g @ np.swapaxes(yv, -1, -2)

    def gy(g):
        if np.ndim(xv) == 1:
            return np.outer(xv, g) if np.ndim(yv) == 2 else g * xv
        if np.ndim(yv) == 1:
            return np.swapaxes(xv, -1, -2) @ g
        return np.swapaxes(xv, -1, -2) @ g

    return _node(out, "matmul", (x, gx), (y, gy))


def outer(x, y):
    return _matmul(reshape(x, (-1, 1)), reshape(y, (1, -1)))


# -- elementwise transcendental ---------------------------------------------

def log(x):
    if not is_var(x):
        return np.log(x)
    xv = x.value
    return _node(np.log(xv), "log", (x, lambda g: g / xv))


def exp(x):
    if not is_var(x):
        return np.exp(x)
    out = np.exp(x.value)
    return _node(out, "exp", (x, lambda g: g * out))


def sqrt(x):
    if not is_var(x):
        return np.sqrt(x)
    out = np.sqrt(x.value)
    return _node(out, "sqrt", (x, lambda g: 0.5 * g / out))


# -- shape manipulation -----------------------------------------------------

def sum(x, axis=None):  # noqa: A001 - mirrors numpy
    if not is_var(x):
        return np.sum(x, axis=axis)
    shape = x.shape
    out = np.sum(x.value, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _node(out, "sum", (x, vjp))


def reshape(x, shape):
    if not is_var(x):
        return np.reshape(x, shape)
    old = x.shape
    return _node(np.reshape(x.value, shape), "reshape",
                 (x, lambda g: np.reshape(g, old)))


def transpose(x):
    if not is_var(x):
        return np.swapaxes(x, -1, -2)
    return _node(np.swapaxes(x.value, -1, -2), "transpose",
                 (x, lambda g: np.swapaxes(g, -1, -2)))


def _getitem(x, key):
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return full

    return _node(x.value[key], "getitem", (x, vjp))


def diagonal(x):
    if not is_var(x):
        return np.diagonal(x).copy()
    n = x.shape[0]
    return _node(np.diagonal(x.value).copy(), "diagonal",
                 (x, lambda g: np.diag(g) if n else g))


def trace(x):
    if not is_var(x):
        return np.trace(x)
    n = x.shape[0]
    return _node(np.trace(x.value), "trace", (x, lambda g: g * np.eye(n)))


def concatenate(xs, axis=0):
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if not any(is_var(x) for x in xs):
        return out
    bounds = np.cumsum([0] + [np.shape(v)[axis] for v in vals])
    pairs = []
    for i, x in enumerate(xs):
        lo, hi = bounds[i], bounds[i + 1]
        pairs.append((x, lambda g, lo=lo, hi=hi: np.take(g, np.arange(lo, hi), axis=axis)))
    return _node(out, "concatenate", *pairs)


def stack(xs, axis=0):
    vals = [value_of(x) for x in xs]
    out = np.stack(vals, axis=axis)
    if not any(is_var(x) for x in xs):
        return out
    pairs = [(x, lambda g, i=i: np.take(g, i, axis=axis)) for i, x in enumerate(xs)]
    return _node(out, "stack", *pairs)


# -- linear algebra ---------------------------------------------------------

def inv(x):
    if not is_var(x):
        return np.linalg.inv(x)
    out = np.linalg.inv(x.value)
    return _node(out, "inv", (x, lambda g: -out.T @ g @ out.T))


def solve(a, b):
    av, bv = value_of(a), value_of(b)
    out = np.linalg.solve(av, bv)
    if not (is_var(a) or is_var(b)):
        return out

    def gb(g):
        return np.linalg.solve(av.T, g)

    def ga(g):
        bbar = np.linalg.solve(av.T, g)
        return -(np.outer(bbar, out) if out.ndim == 1 else bbar @ out.T)

    return _node(out, "solve", (a, ga), (b, gb))


def cholesky(x):
    """Lower Cholesky factor; raises ``LinAlgError`` when not positive definite."""
    if not is_var(x):
        return np.linalg.cholesky(x)
    L = np.linalg.cholesky(x.value)

    def vjp(g):
        # Murray (2016) unblocked reverse rule, returned symmetrised.
        P = np.tril(L.T @ g)
        P[np.diag_indices_from(P)] *= 0.5
        S = scipy.linalg.solve_triangular(L, P.T, lower=True, trans="T")
        S = scipy.linalg.solve_triangular(L, S.T, lower=True, trans="T")
        return 0.5 * (S + S.T)

    return _node(L, "cholesky", (x, vjp))


def solve_triangular(L, b, lower=True):
    Lv, bv = value_of(L), value_of(b)
    out = scipy.linalg.solve_triangular(Lv, bv, lower=lower)
    if not (is_var(L) or is_var(b)):
        return out

    def gb(g):
        return scipy.linalg.solve_triangular(Lv, g, lower=lower, trans="T")

    def gL(g):
        bbar = scipy.linalg.solve_triangular(Lv, g, lower=lower, trans="T")
        full = -(np.outer(bbar, out) if out.ndim == 1 else bbar @ out.T)
        return np.tril(full) if lower else np.triu(full)

    return _node(out, "solve_triangular", (L, gL), (b, gb))


def symmetrize(x):
    return 0.5 * (x + transpose(x))


# -- drivers ----------------------------------------------------------------

def trace_call(f, x):
    """Evaluate ``f`` on a fresh tape; returns ``(tape, input_var, output)``."""
    tape = Tape()
    xv = Var(np.array(x, dtype=float), tape)
    out = f(xv)
    return tape, xv, out


def gradient(f, x):
    """Value and gradient of a scalar function of a real vector.

    Returns
    -------
    value : float
    grad : ndarray, same shape as ``x``
    """
    tape, xv, out = trace_call(f, x)
    if not is_var(out):
        return float(out), np.zeros(np.shape(x))
    value = float(out.value)
    if not np.isfinite(value):
        where = tape.first_nonfinite()
        log_.debug("non-finite value; first non-finite node %s", where)
    grads = tape.backward(out)
    g = grads[xv.index]
    if g is None:
        g = np.zeros(np.shape(x))
    return value, np.asarray(g, dtype=float)


def locate_nonfinite(f, x):
    """``(node index, op name)`` of the first non-finite intermediate of ``f(x)``, or None."""
    tape, _, _ = trace_call(f, x)
    return tape.first_nonfinite()
