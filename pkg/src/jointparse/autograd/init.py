"""Parameter initializers."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


def _fans(shape):
    if len(shape) < 2:
        return shape[0], shape[0]
    return int(np.prod(shape[:-1])), shape[-1]


def xavier_bound(shape) -> float:
    fan_in, fan_out = _fans(shape)
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_scaled(shape, k: float = 1.0, rng: np.random.Generator | None = None,
                requires_grad: bool = True, name: str = "") -> Tensor:
    """Xavier-uniform weights whose variance is divided by ``k``.

    ``k = 1`` is plain Xavier-uniform (variance ``2 / (fan_in + fan_out)``).
    """
    if not k > 0:
        raise ValueError(f"init scale k must be positive, got {k}")
    rng = rng if rng is not None else np.random.default_rng(0)
    bound = xavier_bound(shape) / math.sqrt(k)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = True, name: str = "") -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad, name=name)


def normal(shape, std: float, rng: np.random.Generator, requires_grad: bool = True, name: str = "") -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=requires_grad, name=name)
