"""Reference kernel implementations on top of numpy.

This is the fallback backend: every function here has a signature-identical
twin in the compiled extension (``_speedups``).  All arrays are float64 and
C-contiguous; callers guarantee shapes, kernels do no validation.
"""

import numpy as np

NAME = "numpy"


def mm_nn(a, b):
    return a @ b


def mm_nt(a, b):
    return a @ b.T


def mm_tn(a, b):
    return a.T @ b


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(y, gy):
    # y is tanh(x)
    return gy * (1.0 - y * y)


def sigmoid_fwd(x):
    out = np.empty_like(x)
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def sigmoid_bwd(y, gy):
    return gy * y * (1.0 - y)


def softmax_fwd(x):
    # rows of a 2D array; max-subtraction keeps exp() from overflowing
    shifted = x - x.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def softmax_bwd(y, gy):
    dot = np.sum(gy * y, axis=1, keepdims=True)
    return (gy - dot) * y


def ew_add(a, b):
    return a + b


def ew_sub(a, b):
    return a - b


def ew_mul(a, b):
    return a * b


def ew_square(x):
    return x * x


def adam_update(p, g, m, v, lr, beta1, beta2, eps, t):
    """One bias-corrected adaptive-moment step, in place on p, m, v."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
