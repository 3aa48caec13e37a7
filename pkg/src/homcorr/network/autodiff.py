"""A small reverse-mode differentiation tape over numpy arrays.

Each :class:`Value` holds an array, its gradient, its parent nodes and a
closure that pushes the node's gradient to the parents.  Operations are
vectorized; the spectral layers declare their adjoints directly instead of
being traced through elementary operations.
"""

from __future__ import annotations

import numpy as np


class GradientError(RuntimeError):
    pass


class Value:
    """Node of the tape.  ``data`` is a float64 array (0-d for scalars)."""

    __slots__ = ("data", "grad", "parents", "op", "_backward", "requires_grad", "_consumed")

    def __init__(self, data, parents=(), op="", backward=None, requires_grad=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self._consumed = False

    def __repr__(self):
        return f"Value(shape={self.data.shape}, op={self.op or 'leaf'})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    # -- graph traversal ---------------------------------------------------

    def _topo(self) -> list:
        order, seen = [], set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self, seed=None) -> None:
        """Accumulate gradients of this node into every upstream leaf.

        Raises :class:`GradientError` if called a second time on the same graph.
        """
        if self._consumed:
            raise GradientError("backward() already ran on this graph; rebuild it first")
        if seed is None:
            if self.data.size != 1:
                raise GradientError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order = self._topo()
        grads = {id(self): np.asarray(seed, dtype=float)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        self._consumed = True

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_value(other)))

    def __rsub__(self, other):
        return add(as_value(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def parameter(data) -> Value:
    return Value(np.array(data, dtype=float), requires_grad=True)


def constant(data) -> Value:
    return Value(data, requires_grad=False)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else constant(x)


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    return Value(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Value) -> Value:
    return Value(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    return Value(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def power(a: Value, p: float) -> Value:
    return Value(a.data ** p, (a,), "pow", lambda g: (g * p * a.data ** (p - 1),))


def relu(a: Value) -> Value:
    mask = a.data > 0
    return Value(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def clamp01(a: Value) -> Value:
    """Clamp to ``[0, 1]``; the gradient passes only strictly inside the interval
    or at a bound when it points back inside."""
    x = a.data
    inside = (x > 0.0) & (x < 1.0)
    return Value(np.clip(x, 0.0, 1.0), (a,), "clamp01",
                 lambda g: (g * (inside | ((x <= 0.0) & (g < 0)) | ((x >= 1.0) & (g > 0))),))


def sum_(a: Value, axis=None, keepdims=False) -> Value:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Value(out, (a,), "sum", back)


def mean(a: Value, axis=None, keepdims=False) -> Value:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def weighted_sum(a: Value, weights: np.ndarray, axes: tuple) -> Value:
    """``sum(a * weights)`` over the trailing ``axes`` (weights are constant)."""
    w = np.asarray(weights)
    out = (a.data * w).sum(axis=axes)

    def back(g):
        return (np.expand_dims(g, axes) * w,)

    return Value(out, (a,), "wsum", back)


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Value(a.data @ b.data, (a, b), "matmul", back)


def reshape(a: Value, shape) -> Value:
    return Value(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def moveaxis(a: Value, src, dst) -> Value:
    return Value(np.moveaxis(a.data, src, dst), (a,), "moveaxis",
                 lambda g: (np.moveaxis(g, dst, src),))


def getitem(a: Value, idx) -> Value:
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in
                (idx if isinstance(idx, tuple) else (idx,)))

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Value(a.data[idx], (a,), "getitem", back)


def concat(values, axis=0) -> Value:
    values = [as_value(v) for v in values]
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]
    return Value(np.concatenate([v.data for v in values], axis=axis), values, "concat",
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(values, axis=0) -> Value:
    values = [as_value(v) for v in values]
    return Value(np.stack([v.data for v in values], axis=axis), values, "stack",
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


def log_softmax(a: Value, axis=-1) -> Value:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return Value(out, (a,), "log_softmax",
                 lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits: Value, labels: np.ndarray) -> Value:
    """Mean softmax cross-entropy of integer ``labels``."""
    labels = np.asarray(labels, dtype=int)
    lp = log_softmax(logits)
    n = len(labels)
    picked = getitem(lp, (np.arange(n), labels))
    return mul(sum_(picked), -1.0 / n)
