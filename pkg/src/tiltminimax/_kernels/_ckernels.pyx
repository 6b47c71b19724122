# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Monte Carlo kernels (see ``_fallback`` for the reference versions)."""

import numpy as np

from libc.math cimport expm1, fabs
from libc.string cimport memcpy


cdef extern from "<algorithm>" namespace "std" nogil:
    void nth_element[Iter](Iter first, Iter nth, Iter last)


def row_medians(const double[:, ::1] x):
    """Median of each row (average of the two middle order statistics for even length)."""
    cdef Py_ssize_t R = x.shape[0], n = x.shape[1], r, j, k = n // 2
    cdef double[::1] out = np.empty(R)
    cdef double[::1] buf = np.empty(n)
    cdef double lo_mid
    if n == 0:
        raise ValueError("empty rows")
    with nogil:
        for r in range(R):
            memcpy(&buf[0], &x[r, 0], n * sizeof(double))
            nth_element(&buf[0], &buf[0] + k, &buf[0] + n)
            if n % 2 == 1:
                out[r] = buf[k]
            else:
                lo_mid = buf[0]
                for j in range(1, k):
                    if buf[j] > lo_mid:
                        lo_mid = buf[j]
                out[r] = 0.5 * (lo_mid + buf[k])
    return np.asarray(out)


cdef inline double _loss(int kind, double e, double z, double cap) noexcept nogil:
    cdef double l, d
    if kind == 0:
        d = e - z
        l = d * d
    else:
        # treat iff z >= 0; loss |e| when the action has the wrong sign
        if e > 0.0 and z < 0.0:
            l = e
        elif e < 0.0 and z >= 0.0:
            l = -e
        else:
            l = 0.0
    if l > cap:
        l = cap
    return l


def tilted_stats(const double[:, ::1] z, const double[::1] effects, int kind, double lam, double cap):
    """Per-row mean and variance of ``expm1(min(loss, cap)/lam)``.

    ``kind`` 0 is squared error ``(e - z)^2``, 1 is treatment loss for the
    rule ``1{z >= 0}``. Treatment values take only two levels per row, so
    that branch counts wrong decisions instead of exponentiating.
    """
    cdef Py_ssize_t H = z.shape[0], R = z.shape[1], i, r, k
    cdef double s, m, d, v
    cdef double inv_lam = 1.0 / lam
    if effects.shape[0] != H:
        raise ValueError("effects length must match rows of z")
    if R < 2:
        raise ValueError("need at least two replications")
    cdef double[::1] mean = np.empty(H)
    cdef double[::1] var = np.empty(H)
    buf_arr = np.empty(R)
    cdef double[::1] buf = buf_arr
    with nogil:
        for i in range(H):
            if kind == 1:
                k = 0
                for r in range(R):
                    if _loss(kind, effects[i], z[i, r], cap) > 0.0:
                        k += 1
                v = expm1(_loss(kind, effects[i], -effects[i], cap) * inv_lam)
                mean[i] = v * (<double>k / R)
                var[i] = v * v * (<double>k * (R - k)) / (<double>R * (R - 1))
                continue
            for r in range(R):
                buf[r] = _loss(kind, effects[i], z[i, r], cap) * inv_lam
            # NumPy's vectorised expm1 beats a scalar libm loop here
            with gil:
                np.expm1(buf_arr, out=buf_arr)
            s = 0.0
            for r in range(R):
                s += buf[r]
            m = s / R
            s = 0.0
            for r in range(R):
                d = buf[r] - m
                s += d * d
            mean[i] = m
            var[i] = s / (R - 1)
    return np.asarray(mean), np.asarray(var)
