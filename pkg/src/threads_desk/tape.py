"""A small reverse-mode differentiation tape over numpy arrays.

A :class:`GradTape` records every primitive applied to a :class:`Var` that
(transitively) depends on a parameter. ``tape.backward(loss)`` replays the
adjoint rules in reverse order and leaves gradients in ``Var.grad``.

    tape = GradTape()
    w = tape.param(np.ones((3, 2)))
    y = tanh(tape.const(x) @ w).sum()
    tape.backward(y)
    w.grad

With ``GradTape(enabled=False)`` nothing is recorded, which is what the
encoders use for inference.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import numerics as nx


class Var:
    __slots__ = ("value", "grad", "tape", "requires_grad")

    def __init__(self, value, tape: "GradTape", requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self.tape.lift(other)))

    def __rsub__(self, other):
        return add(self.tape.lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Var":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Var":
        return mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"


class GradTape:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._ops: list[tuple[Var, Callable[[np.ndarray], None]]] = []

    def param(self, value) -> Var:
        return Var(value, self, requires_grad=self.enabled)

    def const(self, value) -> Var:
        return Var(value, self, requires_grad=False)

    def lift(self, x) -> Var:
        return x if isinstance(x, Var) else self.const(x)

    def record(self, out: Var, parents: Sequence[Var], adjoint: Callable[[np.ndarray], None]) -> Var:
        if self.enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            self._ops.append((out, adjoint))
        return out

    def __len__(self):
        return len(self._ops)

    def backward(self, out: Var, seed=None) -> None:
        if not self.enabled:
            raise RuntimeError("backward() on a disabled tape")
        out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for node, adjoint in reversed(self._ops):
            if node.grad is not None:
                adjoint(node.grad)
        self._ops.clear()


def _accumulate(v: Var, g: np.ndarray) -> None:
    if not v.requires_grad:
        return
    if v.grad is None:
        v.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        v.grad = v.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b):
    if isinstance(a, Var):
        return a, a.tape.lift(b)
    return b.tape.lift(a), b


def matmul(a, b) -> Var:
    a, b = _pair(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise nx.ShapeError(f"matmul: {a.shape} x {b.shape}")
    out = Var(a.value @ b.value, a.tape)

    def adjoint(g):
        _accumulate(a, g @ b.value.T)
        _accumulate(b, a.value.T @ g)

    return a.tape.record(out, (a, b), adjoint)


def add(a, b) -> Var:
    a, b = _pair(a, b)
    out = Var(a.value + b.value, a.tape)

    def adjoint(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return a.tape.record(out, (a, b), adjoint)


def mul(a, b) -> Var:
    a, b = _pair(a, b)
    out = Var(a.value * b.value, a.tape)

    def adjoint(g):
        _accumulate(a, _unbroadcast(g * b.value, a.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.shape))

    return a.tape.record(out, (a, b), adjoint)


def neg(a: Var) -> Var:
    out = Var(-a.value, a.tape)
    return a.tape.record(out, (a,), lambda g: _accumulate(a, -g))


def scale(a: Var, c: float) -> Var:
    out = Var(a.value * c, a.tape)
    return a.tape.record(out, (a,), lambda g: _accumulate(a, g * c))


def transpose(a: Var) -> Var:
    out = Var(a.value.T, a.tape)
    return a.tape.record(out, (a,), lambda g: _accumulate(a, g.T))


def sum_(a: Var, axis=None, keepdims: bool = False) -> Var:
    out = Var(a.value.sum(axis=axis, keepdims=keepdims), a.tape)

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return a.tape.record(out, (a,), adjoint)


def mean(a: Var, axis=None, keepdims: bool = False) -> Var:
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def getitem(a: Var, index) -> Var:
    out = Var(a.value[index], a.tape)

    def adjoint(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return a.tape.record(out, (a,), adjoint)


def take_rows(table: Var, ids) -> Var:
    """Row gather (embedding lookup); repeated ids accumulate gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    return getitem(table, ids)


def concat(parts: Sequence[Var], axis: int = 0) -> Var:
    tape = next(p.tape for p in parts if isinstance(p, Var))
    parts = [tape.lift(p) for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=axis), tape)
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def adjoint(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(sl)])

    return tape.record(out, parts, adjoint)


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    out = Var(y, a.tape)
    return a.tape.record(out, (a,), lambda g: _accumulate(a, g * (1.0 - y * y)))


def sigmoid(a: Var) -> Var:
    y = nx.sigmoid(a.value)
    out = Var(y, a.tape)
    return a.tape.record(out, (a,), lambda g: _accumulate(a, g * y * (1.0 - y)))


def relu(a: Var) -> Var:
    on = a.value > 0
    out = Var(a.value * on, a.tape)
    return a.tape.record(out, (a,), lambda g: _accumulate(a, g * on))


def gelu(a: Var) -> Var:
    x = a.value
    cdf = nx.gaussian_cdf(x)
    out = Var(x * cdf, a.tape)
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return a.tape.record(out, (a,), lambda g: _accumulate(a, g * (cdf + x * pdf)))


def log(a: Var) -> Var:
    out = Var(np.log(a.value), a.tape)
    return a.tape.record(out, (a,), lambda g: _accumulate(a, g / a.value))


def exp(a: Var) -> Var:
    y = np.exp(a.value)
    out = Var(y, a.tape)
    return a.tape.record(out, (a,), lambda g: _accumulate(a, g * y))


_ACT = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "gelu": gelu}


def activation(kind: str, a: Var) -> Var:
    try:
        return _ACT[kind](a)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def softmax(a: Var, axis: int = -1) -> Var:
    y = nx.stable_softmax(a.value, axis=axis)
    out = Var(y, a.tape)

    def adjoint(g):
        _accumulate(a, y * (g - np.sum(g * y, axis=axis, keepdims=True)))

    return a.tape.record(out, (a,), adjoint)


def log_softmax(a: Var, axis: int = -1) -> Var:
    y = nx.log_softmax(a.value, axis=axis)
    out = Var(y, a.tape)

    def adjoint(g):
        _accumulate(a, g - np.exp(y) * np.sum(g, axis=axis, keepdims=True))

    return a.tape.record(out, (a,), adjoint)


def layer_norm(x: Var, gain: Var, bias: Var, eps: float = 1e-5) -> Var:
    tape = x.tape
    gain, bias = tape.lift(gain), tape.lift(bias)
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(xv.var(axis=-1, keepdims=True) + eps)
    xhat = (xv - mu) * inv
    out = Var(xhat * gain.value + bias.value, tape)

    def adjoint(g):
        dxhat = g * gain.value
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accumulate(x, dx)
        _accumulate(gain, _unbroadcast(g * xhat, gain.shape))
        _accumulate(bias, _unbroadcast(g, bias.shape))

    return tape.record(out, (x, gain, bias), adjoint)


def l2_normalize_rows(x: Var, eps: float = 1e-12) -> Var:
    norm = np.maximum(np.sqrt(np.sum(x.value**2, axis=-1, keepdims=True)), eps)
    y = x.value / norm
    out = Var(y, x.tape)

    def adjoint(g):
        _accumulate(x, (g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm)

    return x.tape.record(out, (x,), adjoint)


def dropout(x: Var, p: float, rng, training: bool) -> Var:
    if not training or p == 0.0:
        return x
    return mul(x, x.tape.const(nx.dropout_mask(p, x.shape, rng, training)))


def linear(x: Var, weight: Var, bias: Var | None = None) -> Var:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)
