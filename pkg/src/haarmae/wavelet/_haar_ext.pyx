# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled single-level separable 2-tap kernels.

Mirrors _numpy_kernels expression for expression (same multiply/add
order; FP contraction disabled in setup.py) so both backends produce
bit-identical float64 output.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def analyze2d(double[:, :, ::1] x, double h0, double h1, double g0, double g1):
    """One analysis level: (C, H, W) -> (ll, lh, hl, hh), each (C, H/2, W/2)."""
    cdef Py_ssize_t channels = x.shape[0]
    cdef Py_ssize_t half_h = x.shape[1] // 2
    cdef Py_ssize_t half_w = x.shape[2] // 2
    ll_arr = np.empty((channels, half_h, half_w), dtype=np.float64)
    lh_arr = np.empty((channels, half_h, half_w), dtype=np.float64)
    hl_arr = np.empty((channels, half_h, half_w), dtype=np.float64)
    hh_arr = np.empty((channels, half_h, half_w), dtype=np.float64)
    cdef double[:, :, ::1] ll = ll_arr
    cdef double[:, :, ::1] lh = lh_arr
    cdef double[:, :, ::1] hl = hl_arr
    cdef double[:, :, ::1] hh = hh_arr
    cdef Py_ssize_t c, i, j
    cdef double a, b, cc, d, lo_t, lo_b, hi_t, hi_b
    for c in range(channels):
        for i in range(half_h):
            for j in range(half_w):
                a = x[c, 2 * i, 2 * j]
                b = x[c, 2 * i, 2 * j + 1]
                cc = x[c, 2 * i + 1, 2 * j]
                d = x[c, 2 * i + 1, 2 * j + 1]
                lo_t = a * h0 + b * h1
                lo_b = cc * h0 + d * h1
                hi_t = a * g0 + b * g1
                hi_b = cc * g0 + d * g1
                ll[c, i, j] = lo_t * h0 + lo_b * h1
                hl[c, i, j] = lo_t * g0 + lo_b * g1
                lh[c, i, j] = hi_t * h0 + hi_b * h1
                hh[c, i, j] = hi_t * g0 + hi_b * g1
    return ll_arr, lh_arr, hl_arr, hh_arr


def synthesize2d(double[:, :, ::1] ll, double[:, :, ::1] lh,
                 double[:, :, ::1] hl, double[:, :, ::1] hh,
                 double h0, double h1, double g0, double g1):
    """Inverse of analyze2d: four (C, h, w) subbands -> (C, 2h, 2w)."""
    cdef Py_ssize_t channels = ll.shape[0]
    cdef Py_ssize_t half_h = ll.shape[1]
    cdef Py_ssize_t half_w = ll.shape[2]
    x_arr = np.empty((channels, 2 * half_h, 2 * half_w), dtype=np.float64)
    cdef double[:, :, ::1] x = x_arr
    cdef Py_ssize_t c, i, j
    cdef double lo_t, lo_b, hi_t, hi_b
    for c in range(channels):
        for i in range(half_h):
            for j in range(half_w):
                lo_t = ll[c, i, j] * h0 + hl[c, i, j] * g0
                lo_b = ll[c, i, j] * h1 + hl[c, i, j] * g1
                hi_t = lh[c, i, j] * h0 + hh[c, i, j] * g0
                hi_b = lh[c, i, j] * h1 + hh[c, i, j] * g1
                x[c, 2 * i, 2 * j] = lo_t * h0 + hi_t * g0
                x[c, 2 * i, 2 * j + 1] = lo_t * h1 + hi_t * g1
                x[c, 2 * i + 1, 2 * j] = lo_b * h0 + hi_b * g0
                x[c, 2 * i + 1, 2 * j + 1] = lo_b * h1 + hi_b * g1
    return x_arr
