# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tricubic B-spline contraction.

Evaluates a prefiltered coefficient grid at fractional index
coordinates, contracting a 4x4x4 stencil against per-axis weight
vectors.  Derivative weights (orders 1 and 2 per axis) give exact
spline derivatives.  Out-of-range taps reflect about the edge nodes,
matching the mirror-mode prefilter.
"""

from libc.math cimport floor

import numpy as np


cdef inline void _axis_weights(double f, int order, double* w) noexcept nogil:
    if order == 0:
        w[0] = (1.0 - f) * (1.0 - f) * (1.0 - f) / 6.0
        w[1] = (3.0 * f * f * f - 6.0 * f * f + 4.0) / 6.0
        w[2] = (-3.0 * f * f * f + 3.0 * f * f + 3.0 * f + 1.0) / 6.0
        w[3] = f * f * f / 6.0
    elif order == 1:
        w[0] = -(1.0 - f) * (1.0 - f) / 2.0
        w[1] = (3.0 * f * f - 4.0 * f) / 2.0
        w[2] = (-3.0 * f * f + 2.0 * f + 1.0) / 2.0
        w[3] = f * f / 2.0
    else:
        w[0] = 1.0 - f
        w[1] = 3.0 * f - 2.0
        w[2] = -3.0 * f + 1.0
        w[3] = f


cdef inline Py_ssize_t _mirror(Py_ssize_t idx, Py_ssize_t n) noexcept nogil:
    # Taps stray at most two nodes outside, so one reflection suffices.
    if idx < 0:
        idx = -idx
    if idx > n - 1:
        idx = 2 * (n - 1) - idx
    return idx


def evaluate(double[:, :, ::1] coeff, double[:, ::1] t,
             int order0, int order1, int order2):
    """Spline values at index coordinates t of shape (m, 3).

    Orders are per-axis derivative orders in {0, 1, 2}; coordinates must
    satisfy 0 <= t <= n - 1 per axis (enforced by the caller).
    """
    cdef Py_ssize_t m = t.shape[0]
    cdef Py_ssize_t n0 = coeff.shape[0]
    cdef Py_ssize_t n1 = coeff.shape[1]
    cdef Py_ssize_t n2 = coeff.shape[2]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, a, b, c
    cdef Py_ssize_t i0, j0, k0
    cdef Py_ssize_t ia[4]
    cdef Py_ssize_t jb[4]
    cdef Py_ssize_t kc[4]
    cdef double fx, fy, fz, acc, accb, accc
    cdef double wx[4]
    cdef double wy[4]
    cdef double wz[4]
    with nogil:
        for i in range(m):
            i0 = <Py_ssize_t>floor(t[i, 0])
            j0 = <Py_ssize_t>floor(t[i, 1])
            k0 = <Py_ssize_t>floor(t[i, 2])
            fx = t[i, 0] - i0
            fy = t[i, 1] - j0
            fz = t[i, 2] - k0
            _axis_weights(fx, order0, wx)
            _axis_weights(fy, order1, wy)
            _axis_weights(fz, order2, wz)
            for a in range(4):
                ia[a] = _mirror(i0 - 1 + a, n0)
                jb[a] = _mirror(j0 - 1 + a, n1)
                kc[a] = _mirror(k0 - 1 + a, n2)
            acc = 0.0
            for a in range(4):
                accb = 0.0
                for b in range(4):
                    accc = 0.0
                    for c in range(4):
                        accc = accc + wz[c] * coeff[ia[a], jb[b], kc[c]]
                    accb = accb + wy[b] * accc
                acc = acc + wx[a] * accb
            out[i] = acc
    return out_arr
