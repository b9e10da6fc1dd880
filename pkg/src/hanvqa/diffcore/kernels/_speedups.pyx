# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend.

Same API as numpy_backend: float64 C-contiguous in, float64 out.  The
matrices here are small (tens of rows/columns), so the win over numpy
comes from skipping per-call dispatch overhead, not from blocking.
"""

from libc.math cimport exp, sqrt, tanh

import numpy as np

NAME = "cython"


def mm_nn(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t r = a.shape[0], s = a.shape[1], t = b.shape[1]
    out_arr = np.zeros((r, t))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef double aik
    with nogil:
        for i in range(r):
            for k in range(s):
                aik = a[i, k]
                for j in range(t):
                    out[i, j] += aik * b[k, j]
    return out_arr


def mm_nt(double[:, ::1] a, double[:, ::1] b):
    # a @ b.T
    cdef Py_ssize_t r = a.shape[0], s = a.shape[1], t = b.shape[0]
    out_arr = np.empty((r, t))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc
    with nogil:
        for i in range(r):
            for j in range(t):
                acc = 0.0
                for k in range(s):
                    acc += a[i, k] * b[j, k]
                out[i, j] = acc
    return out_arr


def mm_tn(double[:, ::1] a, double[:, ::1] b):
    # a.T @ b
    cdef Py_ssize_t n = a.shape[0], r = a.shape[1], t = b.shape[1]
    out_arr = np.zeros((r, t))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef double aki
    with nogil:
        for k in range(n):
            for i in range(r):
                aki = a[k, i]
                for j in range(t):
                    out[i, j] += aki * b[k, j]
    return out_arr


def tanh_fwd(x):
    arr = np.ascontiguousarray(x).reshape(-1)
    out_arr = np.empty_like(arr)
    cdef double[::1] xv = arr
    cdef double[::1] ov = out_arr
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = tanh(xv[i])
    return out_arr.reshape(np.shape(x))


def tanh_bwd(y, gy):
    ya = np.ascontiguousarray(y).reshape(-1)
    ga = np.ascontiguousarray(gy).reshape(-1)
    out_arr = np.empty_like(ya)
    cdef double[::1] yv = ya
    cdef double[::1] gv = ga
    cdef double[::1] ov = out_arr
    cdef Py_ssize_t i, n = yv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = gv[i] * (1.0 - yv[i] * yv[i])
    return out_arr.reshape(np.shape(y))


def sigmoid_fwd(x):
    arr = np.ascontiguousarray(x).reshape(-1)
    out_arr = np.empty_like(arr)
    cdef double[::1] xv = arr
    cdef double[::1] ov = out_arr
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = 1.0 / (1.0 + exp(-xv[i]))
    return out_arr.reshape(np.shape(x))


def sigmoid_bwd(y, gy):
    ya = np.ascontiguousarray(y).reshape(-1)
    ga = np.ascontiguousarray(gy).reshape(-1)
    out_arr = np.empty_like(ya)
    cdef double[::1] yv = ya
    cdef double[::1] gv = ga
    cdef double[::1] ov = out_arr
    cdef Py_ssize_t i, n = yv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = gv[i] * yv[i] * (1.0 - yv[i])
    return out_arr.reshape(np.shape(y))


def softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    out_arr = np.empty((r, c))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double peak, total
    with nogil:
        for i in range(r):
            peak = x[i, 0]
            for j in range(1, c):
                if x[i, j] > peak:
                    peak = x[i, j]
            total = 0.0
            for j in range(c):
                out[i, j] = exp(x[i, j] - peak)
                total += out[i, j]
            for j in range(c):
                out[i, j] /= total
    return out_arr


def softmax_bwd(double[:, ::1] y, double[:, ::1] gy):
    cdef Py_ssize_t r = y.shape[0], c = y.shape[1]
    out_arr = np.empty((r, c))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    with nogil:
        for i in range(r):
            dot = 0.0
            for j in range(c):
                dot += gy[i, j] * y[i, j]
            for j in range(c):
                out[i, j] = (gy[i, j] - dot) * y[i, j]
    return out_arr


def ew_add(a, b):
    aa = np.ascontiguousarray(a).reshape(-1)
    ba = np.ascontiguousarray(b).reshape(-1)
    out_arr = np.empty_like(aa)
    cdef double[::1] av = aa
    cdef double[::1] bv = ba
    cdef double[::1] ov = out_arr
    cdef Py_ssize_t i, n = av.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = av[i] + bv[i]
    return out_arr.reshape(np.shape(a))


def ew_sub(a, b):
    aa = np.ascontiguousarray(a).reshape(-1)
    ba = np.ascontiguousarray(b).reshape(-1)
    out_arr = np.empty_like(aa)
    cdef double[::1] av = aa
    cdef double[::1] bv = ba
    cdef double[::1] ov = out_arr
    cdef Py_ssize_t i, n = av.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = av[i] - bv[i]
    return out_arr.reshape(np.shape(a))


def ew_mul(a, b):
    aa = np.ascontiguousarray(a).reshape(-1)
    ba = np.ascontiguousarray(b).reshape(-1)
    out_arr = np.empty_like(aa)
    cdef double[::1] av = aa
    cdef double[::1] bv = ba
    cdef double[::1] ov = out_arr
    cdef Py_ssize_t i, n = av.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = av[i] * bv[i]
    return out_arr.reshape(np.shape(a))


def ew_square(x):
    xa = np.ascontiguousarray(x).reshape(-1)
    out_arr = np.empty_like(xa)
    cdef double[::1] xv = xa
    cdef double[::1] ov = out_arr
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = xv[i] * xv[i]
    return out_arr.reshape(np.shape(x))


def adam_update(p, g, m, v, double lr, double beta1, double beta2,
                double eps, long t):
    pa = p.reshape(-1)
    ga = np.ascontiguousarray(g).reshape(-1)
    ma = m.reshape(-1)
    va = v.reshape(-1)
    cdef double[::1] pv = pa
    cdef double[::1] gv = ga
    cdef double[::1] mv = ma
    cdef double[::1] vv = va
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    cdef double mhat, vhat
    with nogil:
        for i in range(n):
            mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i]
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i]
            mhat = mv[i] / c1
            vhat = vv[i] / c2
            pv[i] -= lr * mhat / (sqrt(vhat) + eps)
