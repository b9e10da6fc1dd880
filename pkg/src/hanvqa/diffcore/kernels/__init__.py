"""Kernel backend selection.

The hot inner loops (small-matrix products, gate nonlinearities, row
softmax, the optimizer update) exist twice: as a Cython extension
(``_speedups``) and as plain numpy (``numpy_backend``).  The extension is
picked at import time when it is built; the environment variable
``HANVQA_KERNELS`` forces a choice:

    HANVQA_KERNELS=cython   require the extension, fail loudly if missing
    HANVQA_KERNELS=numpy    ignore the extension
    HANVQA_KERNELS=auto     extension if available, else numpy (default)

``benchmarks/bench_kernels.py`` compares the two on the shapes this
package actually runs.
"""

import os

from . import numpy_backend

_CHOICE = os.environ.get("HANVQA_KERNELS", "auto").lower()

if _CHOICE not in ("auto", "cython", "numpy"):
    raise ValueError(f"HANVQA_KERNELS must be auto|cython|numpy, got {_CHOICE!r}")

if _CHOICE == "numpy":
    _impl = numpy_backend
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        if _CHOICE == "cython":
            raise ImportError(
                "HANVQA_KERNELS=cython but the compiled extension is not built; "
                "reinstall the package or set HANVQA_KERNELS=numpy"
            ) from None
        _impl = numpy_backend


def backend_name() -> str:
    return _impl.NAME


def get_backend():
    return _impl


def set_backend(module) -> None:
    """Swap the kernel set at runtime (benchmarks and parity tests only;
    not thread-safe against in-flight forward passes)."""
    global _impl
    _impl = module


def available_backends():
    out = {"numpy": numpy_backend}
    try:
        from . import _speedups

        out["cython"] = _speedups
    except ImportError:
        pass
    return out


# Module-level indirection: diffcore ops call kernels.<fn> so set_backend
# takes effect without re-imports.
def mm_nn(a, b):
    return _impl.mm_nn(a, b)


def mm_nt(a, b):
    return _impl.mm_nt(a, b)


def mm_tn(a, b):
    return _impl.mm_tn(a, b)


def tanh_fwd(x):
    return _impl.tanh_fwd(x)


def tanh_bwd(y, gy):
    return _impl.tanh_bwd(y, gy)


def sigmoid_fwd(x):
    return _impl.sigmoid_fwd(x)


def sigmoid_bwd(y, gy):
    return _impl.sigmoid_bwd(y, gy)


def softmax_fwd(x):
    return _impl.softmax_fwd(x)


def softmax_bwd(y, gy):
    return _impl.softmax_bwd(y, gy)


def ew_add(a, b):
    return _impl.ew_add(a, b)


def ew_sub(a, b):
    return _impl.ew_sub(a, b)


def ew_mul(a, b):
    return _impl.ew_mul(a, b)


def ew_square(x):
    return _impl.ew_square(x)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, t):
    return _impl.adam_update(p, g, m, v, lr, beta1, beta2, eps, t)
