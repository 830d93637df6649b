"""Parameter constructors."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, get_dtype


def parameter(name: str, data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_dtype()), requires_grad=True, name=name)


def glorot(name: str, rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return parameter(name, rng.uniform(-limit, limit, size=shape))


def normal(name: str, rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    return parameter(name, rng.normal(0.0, std, size=shape))


def zeros(name: str, shape) -> Tensor:
    return parameter(name, np.zeros(shape))


def ones(name: str, shape) -> Tensor:
    return parameter(name, np.ones(shape))
