# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Loop order must match ``_pykernels`` exactly."""

from libc.math cimport exp, INFINITY
import numpy as np


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], p = b.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    out = np.empty((n, p), dtype=np.float64)
    cdef double[:, ::1] c = out
    for i in range(n):
        for j in range(p):
            acc = 0.0
            for k in range(m):
                acc = acc + a[i, k] * b[k, j]
            c[i, j] = acc
    return out


def masked_row_softmax(const double[:, ::1] scores, const unsigned char[:, ::1] mask):
    """Returns (probabilities, first_empty_row); first_empty_row is -1 when all rows have support."""
    cdef Py_ssize_t n = scores.shape[0], m = scores.shape[1]
    cdef Py_ssize_t i, j
    cdef double top, total, s
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] work = np.empty(m, dtype=np.float64)
    for i in range(n):
        top = -INFINITY
        for j in range(m):
            if mask[i, j]:
                s = scores[i, j]
                if s > top:
                    top = s
                work[j] = s
            else:
                work[j] = -INFINITY
        if top == -INFINITY:
            return out, i
        total = 0.0
        for j in range(m):
            work[j] = exp(work[j] - top)
            total = total + work[j]
        for j in range(m):
            o[i, j] = work[j] / total
    return out, -1
