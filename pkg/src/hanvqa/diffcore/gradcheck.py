"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParameterStore
from .tensor import Tape, Tensor


def numeric_gradient(loss_fn: Callable[[], float], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of a forward-only loss w.r.t. one parameter.

    ``loss_fn`` must re-run the forward pass from the current parameter
    values; this function perturbs ``param.data`` in place and restores it.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = loss_fn()
        flat[i] = keep - h
        down = loss_fn()
        flat[i] = keep
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(param.data.shape)


def check_gradients(
    loss_builder: Callable[[], Tensor],
    store: ParameterStore,
    h: float = 1e-5,
    floor: float = 1e-6,
) -> dict[str, float]:
    """Compare tape gradients against central finite differences.

    ``loss_builder`` rebuilds the scalar loss from current parameters; it
    is run once under a tape for analytic gradients and 2 x size(param)
    times without one.  Returns max relative error per parameter, where
    rel = |a - n| / max(|a|, |n|, floor).
    """
    store.zero_grad()
    with Tape() as tape:
        loss = loss_builder()
        tape.backward(loss)
    analytic = {name: np.array(t.grad, copy=True) for name, t in store.items()}

    def forward_loss() -> float:
        return loss_builder().item()

    report: dict[str, float] = {}
    for name, t in store.items():
        numeric = numeric_gradient(forward_loss, t, h=h)
        a, n = analytic[name], numeric
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        report[name] = float(np.max(np.abs(a - n) / denom))
    return report
