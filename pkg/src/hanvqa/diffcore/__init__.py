"""Dense float64 tensor algebra with a reverse-mode tape and Adam.

Everything the models in this package compute is built from the
primitives in :mod:`hanvqa.diffcore.ops`; the kernels underneath exist as
both a compiled extension and a numpy fallback (see
:mod:`hanvqa.diffcore.kernels`).
"""

from . import kernels, ops
from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numeric_gradient
from .params import ParameterStore, glorot_uniform
from .tensor import Tape, Tensor, active_tape, as_tensor

__all__ = [
    "AdamState",
    "ParameterStore",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "as_tensor",
    "check_gradients",
    "glorot_uniform",
    "kernels",
    "load_checkpoint",
    "numeric_gradient",
    "ops",
    "save_checkpoint",
]
