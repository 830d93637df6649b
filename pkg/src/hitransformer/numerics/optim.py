"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import InvariantError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> AdamState:
    """Apply one Adam update in lexicographic name order, then zero the gradients."""
    names = sorted(params)
    for name in names:
        if params[name].grad is None:
            raise InvariantError(f"parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name in names:
        p = params[name]
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise InvariantError(f"Adam moment shape {m.shape} does not match parameter {name!r} {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= update.astype(p.dtype, copy=False)
        p.grad = np.zeros_like(p.data)
    return state
