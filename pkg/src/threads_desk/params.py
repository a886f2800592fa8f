"""Parameter dictionaries: initialization, tape binding, gradient collection."""

from __future__ import annotations

import numpy as np

from .tape import GradTape, Var

Params = dict[str, np.ndarray]


def init_linear(params: Params, name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
    bound = 1.0 / np.sqrt(fan_in)
    params[f"{name}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    params[f"{name}.b"] = rng.uniform(-bound, bound, size=(fan_out,))


def init_layer_norm(params: Params, name: str, width: int) -> None:
    params[f"{name}.g"] = np.ones(width)
    params[f"{name}.beta"] = np.zeros(width)


def bind(tape: GradTape, params: Params, prefix: str = "") -> dict[str, Var]:
    return {prefix + k: tape.param(v) for k, v in params.items()}


def collect_grads(bound: dict[str, Var], prefix: str = "") -> Params:
    out = {}
    for k, v in bound.items():
        if not k.startswith(prefix):
            continue
        key = k[len(prefix):]
        out[key] = np.zeros_like(v.value) if v.grad is None else v.grad
    return out


def count(params: Params) -> int:
    return int(sum(v.size for v in params.values()))


def copy(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}
