"""Trainable parameter collections and initializers."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 2:
        fan_in, fan_out = shape
    else:
        fan_in = fan_out = shape[0]
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class ParameterStore:
    """Ordered, named collection of trainable tensors.

    Creation order is the iteration order, which keeps optimizer updates
    and checkpoints deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)
        self._params[name] = t
        return t

    def create_glorot(self, name: str, rng: np.random.Generator, shape) -> Tensor:
        return self.create(name, glorot_uniform(rng, tuple(shape)))

    def create_zeros(self, name: str, shape) -> Tensor:
        return self.create(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place from a name->array mapping."""
        missing = set(self._params) - set(arrays)
        if missing:
            raise ContractError(f"checkpoint is missing parameters: {sorted(missing)}")
        for name, t in self._params.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != t.data.shape:
                raise ContractError(
                    f"parameter {name!r}: checkpoint shape {src.shape} != model shape {t.data.shape}"
                )
            t.data[...] = src
