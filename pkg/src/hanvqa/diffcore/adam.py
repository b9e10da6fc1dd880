"""Adaptive-moment optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from . import kernels
from .params import ParameterStore


class AdamState:
    """First/second moment arrays per parameter plus the shared step
    counter.  Defaults: lr 3e-4, decays 0.9/0.999, epsilon 1e-8."""

    def __init__(self, store: ParameterStore, lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._moments = {
            name: (np.zeros_like(t.data), np.zeros_like(t.data))
            for name, t in store.items()
        }

    def moments(self, name: str):
        return self._moments[name]


def adam_step(store: ParameterStore, state: AdamState) -> None:
    """Apply one update to every parameter, then zero the gradients."""
    for name, t in store.items():
        if t.grad is None:
            raise ContractError(f"adam_step: parameter {name!r} has no gradient")
    state.step_count += 1
    t_count = state.step_count
    for name, t in store.items():
        m, v = state._moments[name]
        kernels.adam_update(
            t.data, t.grad, m, v,
            state.lr, state.beta1, state.beta2, state.eps, t_count,
        )
        t.grad[...] = 0.0
