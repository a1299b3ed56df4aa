"""Pure numpy fallback for the tridiagonal Cholesky kernels.

Same signatures as the compiled core.  The recurrences loop over the
grid index but are vectorized across replica rows, so batched solves stay
reasonably fast without a compiler.
"""
import numpy as np


def tridiag_cholesky(diag, off):
    diag = np.ascontiguousarray(diag, dtype=np.float64)
    off = np.ascontiguousarray(off, dtype=np.float64)
    n = diag.shape[0]
    if off.shape[0] != n - 1:
        raise ValueError("offdiagonal must have length len(diag) - 1")
    ld = np.empty(n)
    lo = np.empty(max(n - 1, 0))
    d = diag[0]
    if d <= 0.0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    ld[0] = np.sqrt(d)
    for i in range(1, n):
        lo[i - 1] = off[i - 1] / ld[i - 1]
        d = diag[i] - lo[i - 1] * lo[i - 1]
        if d <= 0.0:
            raise np.linalg.LinAlgError("matrix is not positive definite")
        ld[i] = np.sqrt(d)
    return ld, lo


def lower_solve(ld, lo, rhs):
    """Solve L y = rhs row by row."""
    rhs = np.asarray(rhs, dtype=np.float64)
    out = np.empty_like(rhs)
    n = rhs.shape[1]
    if n == 0:
        return out
    out[:, 0] = rhs[:, 0] / ld[0]
    for i in range(1, n):
        out[:, i] = (rhs[:, i] - lo[i - 1] * out[:, i - 1]) / ld[i]
    return out


def upper_solve(ld, lo, rhs):
    """Solve L^T x = rhs row by row."""
    rhs = np.asarray(rhs, dtype=np.float64)
    out = np.empty_like(rhs)
    n = rhs.shape[1]
    if n == 0:
        return out
    out[:, n - 1] = rhs[:, n - 1] / ld[n - 1]
    for i in range(n - 2, -1, -1):
        out[:, i] = (rhs[:, i] - lo[i] * out[:, i + 1]) / ld[i]
    return out
