"""Dense numerical kernels shared by the encoders and the evaluation code.

Everything here works on float64 numpy arrays. Gradients are handled by
:mod:`threads_desk.tape`, which calls back into these forward kernels.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

ACTIVATIONS = ("tanh", "sigmoid", "relu", "gelu")

_SQRT2 = np.sqrt(2.0)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(x, name: str = "x") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-d matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gaussian_cdf(x):
    return 0.5 * (1.0 + erf(np.asarray(x, dtype=np.float64) / _SQRT2))


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * gaussian_cdf(x)


def activation(kind: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def stable_softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("softmax of an empty input")
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def layer_normalize(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if gain.shape[-1] != x.shape[-1] or bias.shape[-1] != x.shape[-1]:
        raise ShapeError(
            f"layer_normalize: input width {x.shape[-1]}, gain {gain.shape}, bias {bias.shape}"
        )
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def dropout_mask(p: float, shape, rng: np.random.Generator | None, training: bool) -> np.ndarray:
    """Inverted-dropout mask: kept entries are scaled by ``1 / (1 - p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return np.ones(shape)
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def singular_values(h) -> np.ndarray:
    h = as_matrix(h, "h")
    if not np.all(np.isfinite(h)):
        raise ValueError("singular_values: non-finite entries")
    s = np.linalg.svd(h, compute_uv=False)
    return np.sort(np.abs(s))[::-1]


def make_rng(seed, *stream: int) -> np.random.Generator:
    """Seeded generator; extra integers select an independent sub-stream."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])
