"""Discretized linear operators for the Dirichlet problem on (0, 1).

Two realizations of the operator ``Lambda`` are provided:

* :class:`SpectralOperator` works on sine coefficients (the modal
  representation) where everything is diagonal.
* :class:`FDOperator` is the three-point finite-difference discretization
  of ``-(a u')'`` on interior nodes (the nodal representation).

A :class:`ResolventFactors` object caches what is needed to apply the
resolvent ``A = (I + tau Lambda)^{-1}`` and the two noise operators of the
modified Euler scheme, ``B1 = A / sqrt(2)`` and ``B2`` with
``B2 B2^T = A / 2``.  In the finite-difference case ``B2 = L^{-T} / sqrt(2)``
where ``L L^T = I + tau Lambda_h`` is the tridiagonal Cholesky factorization.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft
import scipy.linalg

from . import kernels

NODAL = "nodal"
MODAL = "modal"
_REPRESENTATIONS = (NODAL, MODAL)


class RepresentationError(ValueError):
    """Raised when nodal and modal data are mixed."""


@dataclass(frozen=True)
class FieldState:
    """A discretized field, possibly batched along leading axes.

    ``values[..., i]`` is the i-th grid value (nodal) or the i-th sine
    coefficient (modal).
    """

    values: np.ndarray
    representation: str

    def __post_init__(self):
        if self.representation not in _REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim == 0:
            raise ValueError("field values must have at least one axis")
        object.__setattr__(self, "values", arr)

    @property
    def J(self) -> int:
        return self.values.shape[-1]

    def require(self, representation: str) -> "FieldState":
        if self.representation != representation:
            raise RepresentationError(
                f"expected {representation} field, got {self.representation}"
            )
        return self

    def like(self, values) -> "FieldState":
        """New state with the same representation."""
        return FieldState(values, self.representation)

    def __add__(self, other):
        if isinstance(other, FieldState):
            other.require(self.representation)
            return self.like(self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, FieldState):
            other.require(self.representation)
            return self.like(self.values - other.values)
        return NotImplemented


def grid(J: int) -> np.ndarray:
    """Interior nodes i/(J+1), i = 1..J."""
    return np.arange(1, J + 1) / (J + 1)


def sine_basis(j, xi):
    """Evaluate e_j(xi) = sqrt(2) sin(j pi xi)."""
    return np.sqrt(2.0) * np.sin(np.pi * np.asarray(j) * np.asarray(xi))


@dataclass(frozen=True)
class SpectralOperator:
    """Diagonal operator on the first J sine modes with lambda_j = (j pi)^2."""

    J: int
    lambdas: np.ndarray

    kind = "spectral"
    representation = MODAL

    @property
    def h(self) -> float:
        return 1.0 / (self.J + 1)

    @property
    def lambda_min(self) -> float:
        return float(self.lambdas[0])

    def basis(self, j: int, xi):
        if not 1 <= j <= self.J:
            raise ValueError(f"mode index {j} outside 1..{self.J}")
        return sine_basis(j, xi)

    def apply(self, x: FieldState) -> FieldState:
        x.require(MODAL)
        return x.like(self.lambdas * x.values)


@dataclass(frozen=True)
class FDOperator:
    """Three-point finite-difference discretization of -(a u')' on (0, 1)."""

    J: int
    h: float
    diag: np.ndarray
    offdiag: np.ndarray
    a_fn: Optional[Callable] = field(default=None, compare=False)

    kind = "fd"
    representation = NODAL

    def matrix(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)

    def eigenvalues(self) -> np.ndarray:
        return scipy.linalg.eigvalsh_tridiagonal(self.diag, self.offdiag)

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues()[0])

    def apply(self, x: FieldState) -> FieldState:
        x.require(NODAL)
        v = x.values
        out = self.diag * v
        out[..., :-1] += self.offdiag * v[..., 1:]
        out[..., 1:] += self.offdiag * v[..., :-1]
        return x.like(out)


def build_spectral(J: int) -> SpectralOperator:
    if int(J) != J or J < 1:
        raise ValueError("J must be a positive integer")
    J = int(J)
    lambdas = (np.arange(1, J + 1) * np.pi) ** 2
    lambdas.setflags(write=False)
    return SpectralOperator(J, lambdas)


def _constant_one(xi):
    return np.ones_like(xi)


def build_fd(J: int, a_fn: Optional[Callable] = None) -> FDOperator:
    """Assemble the finite-difference operator with midpoint coefficients.

    ``a_fn`` maps an array of points in [0, 1] to positive values; the
    default is a = 1.
    """
    if int(J) != J or J < 1:
        raise ValueError("J must be a positive integer")
    J = int(J)
    if a_fn is None:
        a_fn = _constant_one
    h = 1.0 / (J + 1)
    midpoints = (np.arange(J + 1) + 0.5) * h
    a_mid = np.asarray(a_fn(midpoints), dtype=np.float64) * np.ones(J + 1)
    if not np.all(np.isfinite(a_mid)) or np.min(a_mid) <= 0.0:
        raise ValueError("diffusion coefficient must be positive")
    diag = (a_mid[:-1] + a_mid[1:]) / h**2
    offdiag = -a_mid[1:-1] / h**2
    diag.setflags(write=False)
    offdiag.setflags(write=False)
    return FDOperator(J, h, diag, offdiag, a_fn)


@dataclass(frozen=True)
class ResolventFactors:
    """Cached factorization of I + tau Lambda for one operator and step."""

    tau: float
    op: object
    spectral_scalars: Optional[np.ndarray] = None
    cholesky_diag: Optional[np.ndarray] = None
    cholesky_sub: Optional[np.ndarray] = None
    backend: Optional[str] = None

    @property
    def mode(self) -> str:
        return "spectral-scalars" if self.spectral_scalars is not None else "tridiagonal-cholesky"

    @property
    def representation(self) -> str:
        return self.op.representation

    @property
    def cholesky_L(self) -> np.ndarray:
        """Dense lower bidiagonal factor (for inspection and small tests)."""
        if self.cholesky_diag is None:
            raise ValueError("spectral factors have no Cholesky factor")
        return np.diag(self.cholesky_diag) + np.diag(self.cholesky_sub, -1)

    def solve_lower(self, values):
        return kernels.lower_solve(self.cholesky_diag, self.cholesky_sub, values, self.backend)

    def solve_upper(self, values):
        return kernels.upper_solve(self.cholesky_diag, self.cholesky_sub, values, self.backend)


def factorize_resolvent(op, tau: float, backend: Optional[str] = None) -> ResolventFactors:
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0.0:
        raise ValueError("tau must be positive")
    if op.kind == "spectral":
        scalars = 1.0 / (1.0 + tau * op.lambdas)
        scalars.setflags(write=False)
        return ResolventFactors(tau, op, spectral_scalars=scalars)
    diag = 1.0 + tau * op.diag
    off = tau * op.offdiag
    try:
        ld, lo = kernels.tridiag_cholesky(diag, off, backend)
    except np.linalg.LinAlgError as exc:
        # I + tau Lambda_h is SPD by construction; failing here is a bug.
        raise RuntimeError(f"Cholesky of I + tau Lambda_h failed: {exc}") from exc
    ld.setflags(write=False)
    lo.setflags(write=False)
    return ResolventFactors(tau, op, cholesky_diag=ld, cholesky_sub=lo, backend=backend)


def apply_A_tau(f: ResolventFactors, x: FieldState) -> FieldState:
    """Apply the resolvent (I + tau Lambda)^{-1}."""
    x.require(f.representation)
    if f.spectral_scalars is not None:
        return x.like(f.spectral_scalars * x.values)
    return x.like(f.solve_upper(f.solve_lower(x.values)))


def apply_B2(f: ResolventFactors, g: FieldState) -> FieldState:
    """Apply a square root of A/2: L^{-T}/sqrt(2) (FD) or sqrt(a/2) (spectral)."""
    g.require(f.representation)
    if f.spectral_scalars is not None:
        return g.like(np.sqrt(0.5 * f.spectral_scalars) * g.values)
    return g.like(f.solve_upper(g.values) / np.sqrt(2.0))


def sample_modified_noise(f: ResolventFactors, g1: FieldState, g2: FieldState) -> FieldState:
    """sqrt(tau) (B1 g1 + B2 g2) for independent cylindrical draws g1, g2."""
    g1.require(f.representation)
    g2.require(f.representation)
    b1 = apply_A_tau(f, g1).values / np.sqrt(2.0)
    b2 = apply_B2(f, g2).values
    return g1.like(np.sqrt(f.tau) * (b1 + b2))


def sobolev_norm(op: SpectralOperator, x: FieldState, alpha: float) -> np.ndarray:
    """|x|_alpha = (sum_j lambda_j^{2 alpha} x_j^2)^{1/2} over the last axis."""
    x.require(MODAL)
    if op.kind != "spectral":
        raise ValueError("fractional norms need the spectral operator")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if x.J != op.J:
        raise ValueError("size mismatch between field and operator")
    weights = op.lambdas ** (2.0 * alpha)
    return np.sqrt(np.sum(weights * x.values**2, axis=-1))


def to_modal(x: FieldState) -> FieldState:
    """Sine coefficients c with x_i = sum_j c_j e_j(xi_i)."""
    x.require(NODAL)
    c = scipy.fft.dst(x.values, type=1, norm="ortho", axis=-1) / np.sqrt(x.J + 1)
    return FieldState(c, MODAL)


def to_nodal(x: FieldState) -> FieldState:
    x.require(MODAL)
    v = scipy.fft.dst(x.values, type=1, norm="ortho", axis=-1) * np.sqrt(x.J + 1)
    return FieldState(v, NODAL)


def nodal_modal_transform(op, x: FieldState, direction: str) -> FieldState:
    """Transform between grid values and sine coefficients.

    ``direction`` is ``"to_modal"`` or ``"to_nodal"``.
    """
    if x.J != op.J:
        raise ValueError(f"size mismatch: field has {x.J} entries, operator {op.J}")
    if direction == "to_modal":
        return to_modal(x)
    if direction == "to_nodal":
        return to_nodal(x)
    raise ValueError(f"unknown direction {direction!r}")


def factorize_operator(op: FDOperator, backend: Optional[str] = None):
    """Cholesky factor (diag, sub) of Lambda_h itself."""
    return kernels.tridiag_cholesky(op.diag, op.offdiag, backend)


def sample_invariant(op, g: FieldState, op_factor=None, backend: Optional[str] = None) -> FieldState:
    """Map a cylindrical draw to a draw of nu = N(0, Lambda^{-1}/2).

    Spectral: g_j / sqrt(2 lambda_j).  FD: M^{-T} g / sqrt(2) with
    M M^T = Lambda_h, so the nodal covariance is Lambda_h^{-1} / (2h).
    """
    g.require(op.representation)
    if op.kind == "spectral":
        return g.like(g.values / np.sqrt(2.0 * op.lambdas))
    if op_factor is None:
        op_factor = factorize_operator(op, backend)
    ld, lo = op_factor
    return g.like(kernels.upper_solve(ld, lo, g.values, backend) / np.sqrt(2.0))
