# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in _kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

BACKEND = "cython"


cdef inline double _interp(const double[:, :, ::1] v, double lo0, double lo1, double lo2,
                           double h0, double h1, double h2,
                           double s11, double s12, double s22,
                           double q1, double q2, double q3) noexcept nogil:
    cdef Py_ssize_t n0 = v.shape[0], n1 = v.shape[1], n2 = v.shape[2]
    cdef double f0, f1, f2, a, b, c
    cdef Py_ssize_t i0, i1, i2
    q3 = q3 - 0.5 * (s11 * q1 * q1 + 2.0 * s12 * q1 * q2 + s22 * q2 * q2)
    f0 = (q1 - lo0) / h0
    f1 = (q2 - lo1) / h1
    f2 = (q3 - lo2) / h2
    if f0 < 0 or f0 > n0 - 1 or f1 < 0 or f1 > n1 - 1 or f2 < 0 or f2 > n2 - 1:
        return 0.0
    i0 = <Py_ssize_t>f0
    i1 = <Py_ssize_t>f1
    i2 = <Py_ssize_t>f2
    if i0 > n0 - 2:
        i0 = n0 - 2
    if i1 > n1 - 2:
        i1 = n1 - 2
    if i2 > n2 - 2:
        i2 = n2 - 2
    a = f0 - i0
    b = f1 - i1
    c = f2 - i2
    return ((1 - a) * (1 - b) * (1 - c) * v[i0, i1, i2]
            + a * (1 - b) * (1 - c) * v[i0 + 1, i1, i2]
            + (1 - a) * b * (1 - c) * v[i0, i1 + 1, i2]
            + a * b * (1 - c) * v[i0 + 1, i1 + 1, i2]
            + (1 - a) * (1 - b) * c * v[i0, i1, i2 + 1]
            + a * (1 - b) * c * v[i0 + 1, i1, i2 + 1]
            + (1 - a) * b * c * v[i0, i1 + 1, i2 + 1]
            + a * b * c * v[i0 + 1, i1 + 1, i2 + 1])


def trilinear(values, lo, h, shear, P):
    cdef const double[:, :, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], k
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double lo0 = lo[0], lo1 = lo[1], lo2 = lo[2]
    cdef double h0 = h[0], h1 = h[1], h2 = h[2]
    cdef double s11 = shear[0], s12 = shear[1], s22 = shear[2]
    with nogil:
        for k in range(n):
            o[k] = _interp(v, lo0, lo1, lo2, h0, h1, h2, s11, s12, s22,
                           p[k, 0], p[k, 1], p[k, 2])
    return out


def plane_average(values, lo, h, shear, X, AX, T, Y, W):
    cdef const double[:, :, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] ax = np.ascontiguousarray(AX, dtype=np.float64)
    cdef const double[::1] t = np.ascontiguousarray(T, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], k, j
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double lo0 = lo[0], lo1 = lo[1], lo2 = lo[2]
    cdef double h0 = h[0], h1 = h[1], h2 = h[2]
    cdef double s11 = shear[0], s12 = shear[1], s22 = shear[2]
    cdef double acc, tk, y1, y2
    with nogil:
        for k in range(n):
            acc = 0.0
            tk = t[k]
            for j in range(m):
                y1 = tk * y[j, 0]
                y2 = tk * y[j, 1]
                acc = acc + w[j] * fabs(_interp(
                    v, lo0, lo1, lo2, h0, h1, h2, s11, s12, s22,
                    x[k, 0] - y1, x[k, 1] - y2, x[k, 2] - (ax[k, 0] * y1 + ax[k, 1] * y2)))
            o[k] = acc
    return out


def plane_scatter(shape, lo, h, shear, X, AX, T, C, Y, W):
    cdef Py_ssize_t n0 = shape[0], n1 = shape[1], n2 = shape[2]
    result = np.zeros((n0, n1, n2))
    cdef double[:, :, ::1] out = result
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] ax = np.ascontiguousarray(AX, dtype=np.float64)
    cdef const double[::1] t = np.ascontiguousarray(T, dtype=np.float64)
    cdef const double[::1] cc = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], k, j, i0, i1, i2
    cdef double lo0 = lo[0], lo1 = lo[1], lo2 = lo[2]
    cdef double h0 = h[0], h1 = h[1], h2 = h[2]
    cdef double s11 = shear[0], s12 = shear[1], s22 = shear[2]
    cdef double tk, y1, y2, q1, q2, q3, f0, f1, f2, a, b, c, cw
    with nogil:
        for k in range(n):
            tk = t[k]
            if cc[k] == 0.0:
                continue
            for j in range(m):
                y1 = tk * y[j, 0]
                y2 = tk * y[j, 1]
                q1 = x[k, 0] - y1
                q2 = x[k, 1] - y2
                q3 = x[k, 2] - (ax[k, 0] * y1 + ax[k, 1] * y2)
                q3 = q3 - 0.5 * (s11 * q1 * q1 + 2.0 * s12 * q1 * q2 + s22 * q2 * q2)
                f0 = (q1 - lo0) / h0
                f1 = (q2 - lo1) / h1
                f2 = (q3 - lo2) / h2
                if f0 < 0 or f0 > n0 - 1 or f1 < 0 or f1 > n1 - 1 or f2 < 0 or f2 > n2 - 1:
                    continue
                i0 = <Py_ssize_t>f0
                i1 = <Py_ssize_t>f1
                i2 = <Py_ssize_t>f2
                if i0 > n0 - 2:
                    i0 = n0 - 2
                if i1 > n1 - 2:
                    i1 = n1 - 2
                if i2 > n2 - 2:
                    i2 = n2 - 2
                a = f0 - i0
                b = f1 - i1
                c = f2 - i2
                cw = cc[k] * w[j]
                out[i0, i1, i2] += cw * (1 - a) * (1 - b) * (1 - c)
                out[i0 + 1, i1, i2] += cw * a * (1 - b) * (1 - c)
                out[i0, i1 + 1, i2] += cw * (1 - a) * b * (1 - c)
                out[i0 + 1, i1 + 1, i2] += cw * a * b * (1 - c)
                out[i0, i1, i2 + 1] += cw * (1 - a) * (1 - b) * c
                out[i0 + 1, i1, i2 + 1] += cw * a * (1 - b) * c
                out[i0, i1 + 1, i2 + 1] += cw * (1 - a) * b * c
                out[i0 + 1, i1 + 1, i2 + 1] += cw * a * b * c
    return result
