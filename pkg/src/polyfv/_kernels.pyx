# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse kernels: CSR product, DIC factor/apply and the PCG loop.

The loops run in a fixed order, so results are bitwise reproducible.
"""

from libc.math cimport sqrt

import numpy as np

BACKEND = "compiled"


cdef void _matvec(const long long[::1] indptr, const long long[::1] indices,
                  const double[::1] data, const double[::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, p, n = indptr.shape[0] - 1
    cdef double s
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * x[indices[p]]
        out[i] = s


def csr_matvec(const long long[::1] indptr, const long long[::1] indices,
               const double[::1] data, const double[::1] x, double[::1] out):
    _matvec(indptr, indices, data, x, out)


def dic_factor(const long long[::1] indptr, const long long[::1] indices,
               const double[::1] data):
    """Modified diagonal d_i = a_ii - sum_{j<i} a_ij^2 / d_j.

    Returns (d, bad) where bad is the first row with d_i <= 0, or -1.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    d_arr = np.empty(n)
    cdef double[::1] d = d_arr
    cdef Py_ssize_t i, p, j
    cdef double s, a
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            a = data[p]
            if j < i:
                s -= a * a / d[j]
            elif j == i:
                s += a
        if s <= 0.0:
            return d_arr, i
        d[i] = s
    return d_arr, -1


cdef void _dic_apply(const long long[::1] indptr, const long long[::1] indices,
                     const double[::1] data, const double[::1] d,
                     const double[::1] r, double[::1] z) noexcept nogil:
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, p, j
    cdef double s
    # (D + L) w = r
    for i in range(n):
        s = r[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j < i:
                s -= data[p] * z[j]
        z[i] = s / d[i]
    # (D + U) z = D w
    for i in range(n - 1, -1, -1):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j > i:
                s += data[p] * z[j]
        z[i] -= s / d[i]


def dic_apply(const long long[::1] indptr, const long long[::1] indices,
              const double[::1] data, const double[::1] d,
              const double[::1] r, double[::1] z):
    _dic_apply(indptr, indices, data, d, r, z)


cdef double _dot(const double[::1] a, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


def pcg(const long long[::1] indptr, const long long[::1] indices,
        const double[::1] data, const double[::1] d, const double[::1] b,
        double[::1] x, double tol, Py_ssize_t max_it, bint jacobi=False):
    """Preconditioned CG, updating ``x`` in place.

    ``d`` is the DIC diagonal, or the matrix diagonal when ``jacobi``.
    Returns (iterations, recurrence relative residual, status) with status
    0 converged, 1 max_it reached, 2 non-positive curvature.
    """
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t i, it = 0
    cdef int status = 1
    cdef double bnorm, rz, rz_new, pq, alpha, beta, res
    r_arr = np.empty(n)
    z_arr = np.empty(n)
    p_arr = np.empty(n)
    q_arr = np.empty(n)
    cdef double[::1] r = r_arr, z = z_arr, p = p_arr, q = q_arr

    bnorm = sqrt(_dot(b, b))
    if bnorm == 0.0:
        for i in range(n):
            x[i] = 0.0
        return 0, 0.0, 0
    with nogil:
        _matvec(indptr, indices, data, x, q)
        for i in range(n):
            r[i] = b[i] - q[i]
        res = sqrt(_dot(r, r)) / bnorm
        if res <= tol:
            status = 0
        else:
            if jacobi:
                for i in range(n):
                    z[i] = r[i] / d[i]
            else:
                _dic_apply(indptr, indices, data, d, r, z)
            for i in range(n):
                p[i] = z[i]
            rz = _dot(r, z)
            while it < max_it:
                _matvec(indptr, indices, data, p, q)
                pq = _dot(p, q)
                if pq <= 0.0:
                    status = 2
                    break
                alpha = rz / pq
                for i in range(n):
                    x[i] += alpha * p[i]
                    r[i] -= alpha * q[i]
                it += 1
                res = sqrt(_dot(r, r)) / bnorm
                if res <= tol:
                    status = 0
                    break
                if jacobi:
                    for i in range(n):
                        z[i] = r[i] / d[i]
                else:
                    _dic_apply(indptr, indices, data, d, r, z)
                rz_new = _dot(r, z)
                beta = rz_new / rz
                rz = rz_new
                for i in range(n):
                    p[i] = z[i] + beta * p[i]
    return it, res, status
