"""Differentiable primitives.

Every function takes and returns :class:`Tensor`; forward math goes
through the selected kernel backend where a kernel exists, otherwise
plain numpy.  Backward rules are registered on the active tape via
``record_op``.  Binary arithmetic follows numpy broadcasting; gradients
are summed back over the broadcast axes.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from . import kernels
from .tensor import Tensor, as_tensor, record_op


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(kernels.mm_nn(a.data, b.data))

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(kernels.mm_nt(g, b.data))
        if b.requires_grad:
            b.accumulate_grad(kernels.mm_tn(a.data, g))

    return record_op(out, (a, b), backward)


def _binary(a, b, fwd_same, fwd_np, grad_a, grad_b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        if a.shape == b.shape:
            data = fwd_same(a.data, b.data)
        else:
            data = fwd_np(a.data, b.data)
    except ValueError:
        raise ContractError(f"incompatible shapes: {a.shape} vs {b.shape}") from None
    out = Tensor(data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(grad_a(g, a.data, b.data), a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(grad_b(g, a.data, b.data), b.shape))

    return record_op(out, (a, b), backward)


def add(a, b) -> Tensor:
    return _binary(a, b, kernels.ew_add, np.add,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, kernels.ew_sub, np.subtract,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, kernels.ew_mul, np.multiply,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def neg(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(-x.data)

    def backward():
        if x.requires_grad:
            x.accumulate_grad(-out.grad)

    return record_op(out, (x,), backward)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    x = as_tensor(x)
    c = float(c)
    out = Tensor(x.data * c)

    def backward():
        if x.requires_grad:
            x.accumulate_grad(out.grad * c)

    return record_op(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(kernels.tanh_fwd(x.data))

    def backward():
        if x.requires_grad:
            x.accumulate_grad(kernels.tanh_bwd(out.data, out.grad))

    return record_op(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(kernels.sigmoid_fwd(x.data))

    def backward():
        if x.requires_grad:
            x.accumulate_grad(kernels.sigmoid_bwd(out.data, out.grad))

    return record_op(out, (x,), backward)


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(kernels.ew_square(x.data))

    def backward():
        if x.requires_grad:
            x.accumulate_grad(out.grad * (2.0 * x.data))

    return record_op(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.log(x.data))

    def backward():
        if x.requires_grad:
            x.accumulate_grad(out.grad / x.data)

    return record_op(out, (x,), backward)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor) elementwise; gradient passes where x was kept."""
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, floor))
    mask = x.data >= floor

    def backward():
        if x.requires_grad:
            x.accumulate_grad(out.grad * mask)

    return record_op(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Row-stable softmax: output is non-negative and sums to 1 along
    ``axis`` for any finite input (max-subtraction before exp)."""
    x = as_tensor(x)
    if x.data.ndim == 1:
        y2 = kernels.softmax_fwd(x.data.reshape(1, -1))
        data = y2.reshape(x.shape)
    elif x.data.ndim == 2 and axis in (-1, 1):
        data = kernels.softmax_fwd(x.data)
    else:
        raise ContractError(f"softmax supports 1D or 2D rows, got shape {x.shape} axis {axis}")
    out = Tensor(data)

    def backward():
        if not x.requires_grad:
            return
        if x.data.ndim == 1:
            g = kernels.softmax_bwd(out.data.reshape(1, -1), out.grad.reshape(1, -1))
            x.accumulate_grad(g.reshape(x.shape))
        else:
            x.accumulate_grad(kernels.softmax_bwd(out.data, out.grad))

    return record_op(out, (x,), backward)


def sum_over(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis))

    def backward():
        if not x.requires_grad:
            return
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis=axis)
        x.accumulate_grad(np.broadcast_to(g, x.shape))

    return record_op(out, (x,), backward)


def mean_over(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.mean(axis=axis))
    n = x.data.size if axis is None else x.shape[axis]

    def backward():
        if not x.requires_grad:
            return
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis=axis)
        x.accumulate_grad(np.broadcast_to(g, x.shape) / n)

    return record_op(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def backward():
        if x.requires_grad:
            x.accumulate_grad(out.grad.reshape(x.shape))

    return record_op(out, (x,), backward)


def concat_cols(parts) -> Tensor:
    """Horizontally stack 2D tensors with equal row counts."""
    parts = [as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ContractError(f"concat_cols needs 2D tensors with equal rows, got {[p.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.shape[1] for p in parts]

    def backward():
        g = out.grad
        j = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p.accumulate_grad(g[:, j:j + w])
            j += w

    return record_op(out, parts, backward)


def stack_rows(parts) -> Tensor:
    """Vertically stack 2D tensors with equal column counts."""
    parts = [as_tensor(p) for p in parts]
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ContractError(f"stack_rows needs 2D tensors with equal cols, got {[p.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    heights = [p.shape[0] for p in parts]

    def backward():
        g = out.grad
        i = 0
        for p, h in zip(parts, heights):
            if p.requires_grad:
                p.accumulate_grad(g[i:i + h])
            i += h

    return record_op(out, parts, backward)


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ContractError(f"transpose expects a 2D tensor, got shape {x.shape}")
    out = Tensor(np.ascontiguousarray(x.data.T))

    def backward():
        if x.requires_grad:
            x.accumulate_grad(out.grad.T)

    return record_op(out, (x,), backward)


def slice_cols(x: Tensor, j0: int, j1: int) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.ascontiguousarray(x.data[:, j0:j1]))

    def backward():
        if x.requires_grad:
            g = np.zeros(x.shape)
            g[:, j0:j1] = out.grad
            x.accumulate_grad(g)

    return record_op(out, (x,), backward)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup (embedding): out[i] = table[ids[i]].

    Backward scatter-adds, so repeated ids accumulate correctly.
    """
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ContractError(f"gather_rows expects a 1D id array, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"row id out of range: ids in [{ids.min()}, {ids.max()}], table has {table.shape[0]} rows"
        )
    out = Tensor(table.data[ids])

    def backward():
        if table.requires_grad:
            g = np.zeros(table.shape)
            np.add.at(g, ids, out.grad)
            table.accumulate_grad(g)

    return record_op(out, (table,), backward)


def repeat_rows(x: Tensor, k: int) -> Tensor:
    """Repeat each row k times: (B, d) -> (B*k, d)."""
    x = as_tensor(x)
    out = Tensor(np.repeat(x.data, k, axis=0))

    def backward():
        if x.requires_grad:
            x.accumulate_grad(out.grad.reshape(x.shape[0], k, -1).sum(axis=1))

    return record_op(out, (x,), backward)


def take_per_row(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[i] = x[i, idx[i]] for a 2D tensor."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2 or idx.shape != (x.shape[0],):
        raise ContractError(f"take_per_row: x {x.shape} vs idx {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise ContractError(f"column index out of range for width {x.shape[1]}")
    rows = np.arange(x.shape[0])
    out = Tensor(x.data[rows, idx])

    def backward():
        if x.requires_grad:
            g = np.zeros(x.shape)
            g[rows, idx] = out.grad
            x.accumulate_grad(g)

    return record_op(out, (x,), backward)


def weighted_cell_sum(weights: Tensor, cells: np.ndarray) -> Tensor:
    """Convex combination of per-cell feature vectors.

    weights: (B, L) tensor, cells: (B, L, m) constant array ->
    out[b] = sum_i weights[b, i] * cells[b, i, :].  Features are data,
    not parameters, so only the weights get a gradient.
    """
    weights = as_tensor(weights)
    cells = np.asarray(cells, dtype=np.float64)
    if weights.data.ndim != 2 or cells.ndim != 3 or weights.shape != cells.shape[:2]:
        raise ContractError(
            f"weighted_cell_sum: weights {weights.shape} vs cells {cells.shape}"
        )
    out = Tensor(np.einsum("bi,bim->bm", weights.data, cells))

    def backward():
        if weights.requires_grad:
            weights.accumulate_grad(np.einsum("bm,bim->bi", out.grad, cells))

    return record_op(out, (weights,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero entries with probability ``rate`` and scale
    the survivors by 1/(1-rate).  Identity when rate == 0."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask)

    def backward():
        if x.requires_grad:
            x.accumulate_grad(out.grad * mask)

    return record_op(out, (x,), backward)
