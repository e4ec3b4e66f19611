"""Tape-based reverse-mode differentiation over numpy arrays.

Only the handful of primitives needed by the losses in this package are
provided. Every primitive works on plain ndarrays as well, so the same model
code serves both traced (gradient) and untraced (sampling) evaluation.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class NumericalError(ArithmeticError):
    """Raised when a traced computation produces a non-finite value."""


class Var:
    """A node on the gradient tape holding an ndarray value."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "op")
    # make ndarray binary operators defer to our reflected methods
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward_fn=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a traced value is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _node(value, parents, backward_fn, op):
    return Var(value, parents, backward_fn, op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- primitives -----------------------------------------------------------


def add(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.add(a, b)
    av, bv = value_of(a), value_of(b)

    def backward(g):
        return (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape))

    return _node(av + bv, (a, b), backward, "add")


def neg(a):
    if not isinstance(a, Var):
        return np.negative(a)
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.multiply(a, b)
    av, bv = value_of(a), value_of(b)

    def backward(g):
        return (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))

    return _node(av * bv, (a, b), backward, "mul")


def matmul(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.matmul(a, b)
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul is only defined for 2-D operands")

    def backward(g):
        return (g @ bv.T, av.T @ g)

    return _node(av @ bv, (a, b), backward, "matmul")


def take(a, idx):
    """Indexing/slicing; backward scatters into zeros."""
    if not isinstance(a, Var):
        return np.asarray(a)[idx]

    basic = isinstance(idx, (slice, int)) or (
        isinstance(idx, tuple) and all(isinstance(i, (slice, int)) for i in idx))

    def backward(g):
        full = np.zeros_like(a.value)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _node(a.value[idx], (a,), backward, "take")


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    orig = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def total(a, axis=None):
    """Sum over ``axis`` (all axes when None)."""
    if not isinstance(a, Var):
        return np.sum(a, axis=axis)
    shape = a.value.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.sum(a.value, axis=axis), (a,), backward, "sum")


def mean(a, axis=None):
    n = value_of(a).size if axis is None else value_of(a).shape[axis]
    return total(a, axis) * (1.0 / n)


def square(a):
    if not isinstance(a, Var):
        return np.square(a)
    return _node(a.value**2, (a,), lambda g: (2.0 * a.value * g,), "square")


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if not isinstance(a, Var):
        return np.log(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def softplus(a):
    """log(1 + exp(a)), evaluated stably."""
    if not isinstance(a, Var):
        return np.logaddexp(0.0, a)
    return _node(np.logaddexp(0.0, a.value), (a,), lambda g: (g * _sigmoid(a.value),), "softplus")


def silu(a):
    if not isinstance(a, Var):
        return a * _sigmoid(a)
    s = _sigmoid(a.value)

    def backward(g):
        return (g * (s + a.value * s * (1.0 - s)),)

    return _node(a.value * s, (a,), backward, "silu")


def minimum(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.minimum(a, b)
    av, bv = value_of(a), value_of(b)
    pick_a = av <= bv

    def backward(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), av.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), bv.shape))

    return _node(np.minimum(av, bv), (a, b), backward, "minimum")


def clip(a, lo, hi):
    if not isinstance(a, Var):
        return np.clip(a, lo, hi)
    inside = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),), "clip")


# --- tape traversal -------------------------------------------------------


def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Var) and id(p) not in seen:
                stack.append((p, False))
    return order


def _first_nonfinite(order):
    for node in order:
        if not np.all(np.isfinite(node.value)):
            return node
    return None


def backward(root: Var) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every node on the tape."""
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if not isinstance(parent, Var):
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def grad_of(fn: Callable[[Var], Var], x: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and gradient of scalar ``fn`` at the flat vector ``x``."""
    leaf = Var(np.array(x, dtype=np.float64, copy=True))
    out = fn(leaf)
    if not isinstance(out, Var):
        # constant w.r.t. x
        val = float(np.asarray(out))
        if not np.isfinite(val):
            raise NumericalError("non-finite loss from an untraced computation")
        return val, np.zeros_like(leaf.value)
    if out.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {out.value.shape}")
    if not np.isfinite(out.value).all():
        bad = _first_nonfinite(_topo_order(out))
        raise NumericalError(f"non-finite value produced by primitive '{bad.op}'")
    backward(out)
    g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
    return float(out.value.reshape(())), g
