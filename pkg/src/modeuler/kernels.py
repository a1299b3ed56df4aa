"""Backend selection for the tridiagonal kernels.

The compiled Cython core is used when it imported cleanly; otherwise the
numpy fallback is used.  Set ``MODEULER_PURE_PYTHON=1`` to force the
fallback (handy for benchmarking and for testing both paths).
"""
import os

import numpy as np

from . import _tridiag_py

_compiled = None
if os.environ.get("MODEULER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _tridiag as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _tridiag_py


def available_backends():
    """Names of the backends importable in this environment."""
    names = ["python"]
    try:
        from . import _tridiag  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _tridiag_py
    if name == "cython":
        from . import _tridiag
        return _tridiag
    raise ValueError(f"unknown backend {name!r}")


def _as_rows(rhs):
    arr = np.ascontiguousarray(rhs, dtype=np.float64)
    shape = arr.shape
    return arr.reshape(-1, shape[-1]), shape


def tridiag_cholesky(diag, off, backend=None):
    impl = get_backend(backend)
    return impl.tridiag_cholesky(
        np.ascontiguousarray(diag, dtype=np.float64),
        np.ascontiguousarray(off, dtype=np.float64),
    )


def lower_solve(ld, lo, rhs, backend=None):
    """Solve L y = rhs along the last axis; leading axes are batch axes."""
    rows, shape = _as_rows(rhs)
    out = get_backend(backend).lower_solve(ld, lo, rows)
    return np.asarray(out).reshape(shape)


def upper_solve(ld, lo, rhs, backend=None):
    """Solve L^T x = rhs along the last axis; leading axes are batch axes."""
    rows, shape = _as_rows(rhs)
    out = get_backend(backend).upper_solve(ld, lo, rows)
    return np.asarray(out).reshape(shape)
