# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tridiagonal Cholesky kernels.

The factor L of a symmetric positive definite tridiagonal matrix is lower
bidiagonal: ``ld`` holds its diagonal, ``lo`` its subdiagonal.  The solves
act on the last axis of a C-contiguous 2-D array, one row per replica.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def tridiag_cholesky(const double[::1] diag, const double[::1] off):
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef double d
    if off.shape[0] != n - 1:
        raise ValueError("offdiagonal must have length len(diag) - 1")
    ld_arr = np.empty(n, dtype=np.float64)
    lo_arr = np.empty(max(n - 1, 0), dtype=np.float64)
    cdef double[::1] ld = ld_arr
    cdef double[::1] lo = lo_arr
    with nogil:
        d = diag[0]
        if d <= 0.0:
            with gil:
                raise np.linalg.LinAlgError("matrix is not positive definite")
        ld[0] = sqrt(d)
        for i in range(1, n):
            lo[i - 1] = off[i - 1] / ld[i - 1]
            d = diag[i] - lo[i - 1] * lo[i - 1]
            if d <= 0.0:
                with gil:
                    raise np.linalg.LinAlgError("matrix is not positive definite")
            ld[i] = sqrt(d)
    return ld_arr, lo_arr


def lower_solve(const double[::1] ld, const double[::1] lo, const double[:, ::1] rhs):
    """Solve L y = rhs row by row."""
    cdef Py_ssize_t rows = rhs.shape[0]
    cdef Py_ssize_t n = rhs.shape[1]
    cdef Py_ssize_t r, i
    out_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if n == 0:
        return out_arr
    with nogil:
        for r in range(rows):
            out[r, 0] = rhs[r, 0] / ld[0]
            for i in range(1, n):
                out[r, i] = (rhs[r, i] - lo[i - 1] * out[r, i - 1]) / ld[i]
    return out_arr


def upper_solve(const double[::1] ld, const double[::1] lo, const double[:, ::1] rhs):
    """Solve L^T x = rhs row by row."""
    cdef Py_ssize_t rows = rhs.shape[0]
    cdef Py_ssize_t n = rhs.shape[1]
    cdef Py_ssize_t r, i
    out_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if n == 0:
        return out_arr
    with nogil:
        for r in range(rows):
            out[r, n - 1] = rhs[r, n - 1] / ld[n - 1]
            for i in range(n - 2, -1, -1):
                out[r, i] = (rhs[r, i] - lo[i] * out[r, i + 1]) / ld[i]
    return out_arr
