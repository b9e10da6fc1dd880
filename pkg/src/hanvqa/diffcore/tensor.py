"""Dense float64 tensors and the reverse-mode tape.

A ``Tensor`` wraps a row-major float64 numpy array plus a gradient slot.
While a ``Tape`` is active on the current thread, every primitive op
appends a record holding its output, its differentiable inputs and a
closure computing the local backward step.  ``Tape.backward(loss)`` walks
the records in reverse; because forward execution is single-threaded the
recording order is already a valid topological order.

Gradient accumulation is additive: a tensor consumed by two ops receives
the sum of both contributions.  Tapes are thread-local and never shared
across threads; with no active tape every op runs forward-only, which is
what evaluation over read-only parameters uses.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError

_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Light operator sugar; the named functions in ops.py are the API.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def sum(self, axis=None):
        from . import ops

        return ops.sum_over(self, axis=axis)

    def mean(self, axis=None):
        from . import ops

        return ops.mean_over(self, axis=axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Use as a context manager::

        with Tape() as tape:
            loss = model_loss(...)
        grads_via = tape.backward(loss)
    """

    __slots__ = ("_records",)

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape context exited out of order")
        stack.pop()

    def record(self, out: Tensor, backward: Callable[[], None]) -> None:
        self._records.append((out, backward))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into .grad of every tensor the
        recorded ops touched, then clear the tape."""
        if loss.data.size != 1:
            raise ContractError(
                f"backward needs a scalar loss, got shape {loss.shape}"
            )
        loss.accumulate_grad(np.ones_like(loss.data))
        for out, backward in reversed(self._records):
            if out.grad is None:
                continue  # never contributed to the loss
            backward()
        self._records.clear()


def record_op(out: Tensor, inputs: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    """Mark ``out`` as produced from ``inputs``; register the backward
    closure when a tape is active and some input is trainable."""
    tape = active_tape()
    needs = any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if tape is not None and needs:
        tape.record(out, backward)
    return out
