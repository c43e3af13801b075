# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Sinkhorn half-step kernels.

Every reduction runs in a fixed order that depends only on the row (or
column) being reduced, never on how many rows a caller passes in. A client
holding a row block of K therefore produces bit-identical products to the
centralized solver holding all of K.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "cython"


cdef inline double _dot4(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    # four interleaved partial sums, combined as (s0 + s1) + (s2 + s3)
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t n4 = n - (n % 4)
    while k < n4:
        s0 += a[k] * b[k]
        s1 += a[k + 1] * b[k + 1]
        s2 += a[k + 2] * b[k + 2]
        s3 += a[k + 3] * b[k + 3]
        k += 4
    while k < n:
        s0 += a[k] * b[k]
        k += 1
    return (s0 + s1) + (s2 + s3)


def gemm_rows(const double[:, ::1] K, const double[:, ::1] X):
    """Return ``K @ X`` for a row block ``K`` (p x n) and ``X`` (n x N)."""
    cdef Py_ssize_t p = K.shape[0], n = K.shape[1], N = X.shape[1]
    if X.shape[0] != n:
        raise ValueError(f"shape mismatch: K is {p}x{n}, X has {X.shape[0]} rows")
    out_arr = np.zeros((p, N), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef double kik
    cdef double* orow
    cdef const double* xrow
    cdef double[::1] xcol
    if p == 0 or n == 0:
        return out_arr
    if N == 1:
        xcol = np.ascontiguousarray(X[:, 0])
        with nogil:
            for i in range(p):
                out[i, 0] = _dot4(&K[i, 0], &xcol[0], n)
    else:
        with nogil:
            for i in range(p):
                orow = &out[i, 0]
                for k in range(n):
                    kik = K[i, k]
                    xrow = &X[k, 0]
                    for j in range(N):
                        orow[j] += kik * xrow[j]
    return out_arr


def gemm_cols(const double[:, ::1] K, const double[:, ::1] X):
    """Return ``K.T @ X`` for a column block ``K`` (n x p) and ``X`` (n x N).

    Each output entry accumulates over rows of ``K`` in ascending order.
    """
    cdef Py_ssize_t n = K.shape[0], p = K.shape[1], N = X.shape[1]
    if X.shape[0] != n:
        raise ValueError(f"shape mismatch: K is {n}x{p}, X has {X.shape[0]} rows")
    out_arr = np.zeros((p, N), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, l
    cdef double xi, kij
    cdef const double* krow
    cdef const double* xrow
    cdef double* obuf = &out[0, 0] if p > 0 and N > 0 else NULL
    if obuf == NULL or n == 0:
        return out_arr
    with nogil:
        if N == 1:
            for i in range(n):
                xi = X[i, 0]
                krow = &K[i, 0]
                for j in range(p):
                    obuf[j] += krow[j] * xi
        else:
            for i in range(n):
                krow = &K[i, 0]
                xrow = &X[i, 0]
                for j in range(p):
                    kij = krow[j]
                    for l in range(N):
                        obuf[j * N + l] += kij * xrow[l]
    return out_arr


def ratio(const double[:, ::1] marg, const double[:, ::1] den, double floor):
    """Componentwise ``marg / den``; returns ``(out, bad)``.

    ``bad`` is the flat index of the first denominator that is not above
    ``floor`` (NaN included), or -1.
    """
    cdef Py_ssize_t p = den.shape[0], N = den.shape[1]
    if marg.shape[0] != p or marg.shape[1] != N:
        raise ValueError("marginal and denominator shapes differ")
    out_arr = np.empty((p, N), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, bad = -1
    cdef double d
    with nogil:
        for i in range(p):
            for j in range(N):
                d = den[i, j]
                if not (d > floor):
                    if bad < 0:
                        bad = i * N + j
                out[i, j] = marg[i, j] / d
    return out_arr, bad


def residual(const double[:, ::1] s, const double[:, ::1] q, const double[:, ::1] marg):
    """Per-column L1 and signed sums of ``s * q - marg``."""
    cdef Py_ssize_t p = s.shape[0], N = s.shape[1]
    l1_arr = np.zeros(N, dtype=np.float64)
    sg_arr = np.zeros(N, dtype=np.float64)
    cdef double[::1] l1 = l1_arr
    cdef double[::1] sg = sg_arr
    cdef Py_ssize_t i, j
    cdef double d
    with nogil:
        for i in range(p):
            for j in range(N):
                d = s[i, j] * q[i, j] - marg[i, j]
                sg[j] += d
                l1[j] += d if d >= 0 else -d
    return l1_arr, sg_arr
