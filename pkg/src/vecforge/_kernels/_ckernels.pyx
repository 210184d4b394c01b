# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled order-statistic kernels.

Semantics mirror pykernels exactly: ascending sort, then
``lo + (hi - lo) * f`` interpolation in double precision, so results are
bitwise identical to the numpy lane.
"""

from libc.stdlib cimport free, malloc

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "c"


cdef extern from "stdlib.h":
    void qsort(void *base, size_t nmemb, size_t size,
               int (*compar)(const void *, const void *)) nogil


cdef int _cmp_double(const void *a, const void *b) noexcept nogil:
    cdef double da = (<const double *> a)[0]
    cdef double db = (<const double *> b)[0]
    if da < db:
        return -1
    if da > db:
        return 1
    return 0


cdef inline void _insertion_sort(double *buf, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double key
    for i in range(1, n):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] > key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key


def quantile_flat(const double[::1] values, double p):
    """Interpolated p-quantile of a 1-D float64 array (input left intact)."""
    cdef Py_ssize_t n = values.shape[0]
    cdef double pos = 1.0 + (n - 1) * p
    cdef Py_ssize_t k = <Py_ssize_t> pos
    cdef double f = pos - k
    cdef double *buf = <double *> malloc(n * sizeof(double))
    if buf is NULL:
        raise MemoryError()
    cdef Py_ssize_t i
    cdef double lo, hi, out
    with nogil:
        for i in range(n):
            buf[i] = values[i]
        qsort(buf, n, sizeof(double), _cmp_double)
        if k >= n or f == 0.0:
            out = buf[k - 1]
        else:
            lo = buf[k - 1]
            hi = buf[k]
            out = lo + (hi - lo) * f
    free(buf)
    return out


def quantile_across(const double[:, ::1] stack, double p):
    """Per-position interpolated p-quantile down axis 0 of an (n, m) array."""
    cdef Py_ssize_t n = stack.shape[0]
    cdef Py_ssize_t m = stack.shape[1]
    cdef double pos = 1.0 + (n - 1) * p
    cdef Py_ssize_t k = <Py_ssize_t> pos
    cdef double f = pos - k
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double *buf = <double *> malloc(n * sizeof(double))
    if buf is NULL:
        raise MemoryError()
    cdef Py_ssize_t i, j
    cdef double lo, hi
    with nogil:
        for j in range(m):
            for i in range(n):
                buf[i] = stack[i, j]
            _insertion_sort(buf, n)
            if k >= n or f == 0.0:
                out[j] = buf[k - 1]
            else:
                lo = buf[k - 1]
                hi = buf[k]
                out[j] = lo + (hi - lo) * f
    free(buf)
    return out_arr
