"""Diagnostics: closed-form mode variances, regularity and equivalence
indicators, Gaussian Hellinger distances, roughness statistics, and
deterministic or Monte Carlo convergence-rate estimates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import scipy.fft
import scipy.special

from .noise import DEFAULT_BLOCK, NoiseStream, run_replicas
from .operators import MODAL, NODAL, FieldState, build_spectral
from .problems import ProblemSpec

GAUSSIAN_SCHEMES = ("exact", "modified", "modified_bform", "modified_expform", "standard", "exponential")


@dataclass(frozen=True)
class ModeVarianceTable:
    scheme: str
    lambdas: np.ndarray
    variances: np.ndarray
    tau: Optional[float]
    N: Optional[float]

    @property
    def J(self) -> int:
        return self.lambdas.shape[0]

    def truncate(self, J: int) -> "ModeVarianceTable":
        return ModeVarianceTable(self.scheme, self.lambdas[:J], self.variances[:J], self.tau, self.N)


def _lambdas_of(op_or_lambdas) -> np.ndarray:
    if hasattr(op_or_lambdas, "lambdas"):
        return np.asarray(op_or_lambdas.lambdas, dtype=np.float64)
    return np.asarray(op_or_lambdas, dtype=np.float64)


def mode_variances(scheme: str, op, tau: Optional[float] = None, N: Optional[float] = None) -> ModeVarianceTable:
    """Per-mode variances at time N tau from x0 = 0 with F = 0.

    ``N=None`` (or ``np.inf``) gives the stationary variances.  ``tau`` is
    ignored for ``exact`` only when N is stationary.
    """
    lam = _lambdas_of(op)
    stationary = N is None or np.isinf(N)
    if scheme not in GAUSSIAN_SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {GAUSSIAN_SCHEMES}")
    if not stationary:
        if N < 0:
            raise ValueError("N must be non-negative")
        if tau is None or not tau > 0:
            raise ValueError("finite horizons need a positive tau")
    elif scheme == "standard" and (tau is None or not tau > 0):
        raise ValueError("the standard scheme's stationary law depends on tau")

    if scheme in ("exact", "exponential"):
        base = 1.0 / (2.0 * lam)
        decay = 0.0 if stationary else np.exp(-2.0 * N * tau * lam)
    else:
        if stationary:
            decay = 0.0
        else:
            decay = np.exp(-2.0 * N * np.log1p(tau * lam))
        if scheme == "standard":
            base = 1.0 / (lam * (2.0 + tau * lam))
        else:
            base = 1.0 / (2.0 * lam)
    var = base * (1.0 - decay)
    return ModeVarianceTable(scheme, lam, var, tau, None if stationary else N)


def tail_exponent(scheme: str, alpha: float, stationary: bool = True) -> float:
    """Exponent p with lambda_j^{2 alpha} v_j ~ j^p for large j.

    With lambda_j ~ j^2: exact and modified give 4 alpha - 2; the standard
    stationary law gains an extra 1/lambda_j, giving 4 alpha - 4.  At a
    finite horizon the standard variances behave like the modified ones only
    for modes with tau lambda_j of order one, so the stationary exponent is
    also the asymptotic one.
    """
    if scheme == "standard":
        return 4.0 * alpha - 4.0
    return 4.0 * alpha - 2.0


@dataclass(frozen=True)
class SobolevMoment:
    value: float
    alpha: float
    partial_sums: np.ndarray
    sizes: np.ndarray
    ratios: np.ndarray
    converges: bool
    analytic_converges: bool
    tail_estimate: float


def doubling_ratios(terms: np.ndarray, levels: int = 4):
    """Partial sums at J/2^k and the ratios of successive doubling increments."""
    J = terms.shape[0]
    sizes = np.array([J >> k for k in range(levels, -1, -1)])
    if sizes[0] < 1:
        raise ValueError("too few modes for the doubling test")
    csum = np.cumsum(terms)
    partial = csum[sizes - 1]
    incr = np.diff(partial)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = incr[1:] / incr[:-1]
    return sizes, partial, ratios


def sobolev_moment(table: ModeVarianceTable, alpha: float, levels: int = 4, margin: float = 1e-3) -> SobolevMoment:
    """Sum of lambda_j^{2 alpha} v_j with a convergence verdict.

    The verdict is a doubling test: the increment of the partial sum from
    J/2 to J is compared with the increment from J/4 to J/2.  For terms
    decaying like j^p the ratio tends to 2^{p+1}, which is below one exactly
    when the series converges.  The series is declared convergent when the
    last ratios are all below ``1 - margin``.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    terms = table.lambdas ** (2.0 * alpha) * table.variances
    sizes, partial, ratios = doubling_ratios(terms, levels)
    converges = bool(np.all(ratios[-2:] < 1.0 - margin))
    p = tail_exponent(table.scheme, alpha, table.N is None)
    J = table.J
    if p < -1.0:
        # sum_{j>J} c j^p with c fitted on the last term
        c = terms[-1] / J**p
        tail = float(c * J ** (p + 1.0) / (-(p + 1.0)))
    else:
        tail = float("inf")
    return SobolevMoment(float(partial[-1]), alpha, partial, sizes, ratios, converges, p < -1.0, tail)


@dataclass(frozen=True)
class FeldmanHajek:
    modified_sum: float
    exact_sum: float
    modified_tail_bound: float
    exact_tail_bound: float

    @property
    def equivalent(self) -> bool:
        return bool(np.isfinite(self.modified_sum + self.modified_tail_bound)
                    and np.isfinite(self.exact_sum + self.exact_tail_bound))


def feldman_hajek_indicator(op, tau: float, N: int) -> FeldmanHajek:
    """Mode sums sum_j (1 + tau lambda_j)^{-2N} and sum_j exp(-2 N tau lambda_j).

    Tail bounds beyond the retained modes use lambda_j = (j pi)^2 and the
    integral test: the modified tail is bounded by
    (tau pi^2)^{-2N} J^{1-4N} / (4N - 1) and the exact tail by a
    complementary error function.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    lam = _lambdas_of(op)
    J = lam.shape[0]
    mod_sum = float(np.sum(np.exp(-2.0 * N * np.log1p(tau * lam))))
    exact_sum = float(np.sum(np.exp(-2.0 * N * tau * lam)))
    log_tail = -2.0 * N * np.log(tau * np.pi**2) + (1.0 - 4.0 * N) * np.log(J) - np.log(4.0 * N - 1.0)
    mod_tail = float(np.exp(min(log_tail, 700.0)))
    c = 2.0 * N * tau * np.pi**2
    exact_tail = float(0.5 * np.sqrt(np.pi / c) * scipy.special.erfc(np.sqrt(c) * J))
    return FeldmanHajek(mod_sum, exact_sum, mod_tail, exact_tail)


def hellinger_neg_log_affinity(v1, v2) -> float:
    """-log prod_j rho_j, so that H^2 = 1 - exp(-value).

    Keeps resolution where H itself has rounded to 1.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    both_zero = (v1 == 0) & (v2 == 0)
    s = np.where(both_zero, 1.0, v1 + v2)
    ratio = np.where(both_zero, 1.0, 2.0 * np.sqrt(v1 * v2) / s)
    with np.errstate(divide="ignore"):
        return float(-0.5 * np.sum(np.log(ratio)))


def hellinger_diag(v1, v2) -> float:
    """Hellinger distance between centered Gaussians with diagonal covariances.

    H = sqrt(1 - prod_j rho_j) with rho_j = (2 sqrt(v1 v2) / (v1 + v2))^{1/2}.
    Modes where both variances vanish are identical point masses.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise ValueError("variance arrays must have equal shapes")
    if np.any(v1 < 0) or np.any(v2 < 0):
        raise ValueError("variances must be non-negative")
    log_affinity = -hellinger_neg_log_affinity(v1, v2)
    return float(np.sqrt(max(0.0, -np.expm1(log_affinity))))


def quadratic_variation(x: FieldState) -> np.ndarray:
    """sum_{i=0}^{J} (x_{i+1} - x_i)^2 with zero boundary values."""
    x.require(NODAL)
    v = x.values
    pad = np.zeros(v.shape[:-1] + (1,))
    full = np.concatenate([pad, v, pad], axis=-1)
    return np.sum(np.diff(full, axis=-1) ** 2, axis=-1)


def fd_laplacian_eigenvalues(J: int) -> np.ndarray:
    """Eigenvalues (4/h^2) sin^2(j pi h / 2) of the a = 1 finite-difference operator."""
    h = 1.0 / (J + 1)
    return 4.0 / h**2 * np.sin(np.arange(1, J + 1) * np.pi * h / 2.0) ** 2


def qv_mode_sum(modal_variances) -> float:
    """Expected quadratic variation of a grid field with independent sine modes.

    For nodal values x = sum_j c_j e_j(xi_i), QV = h^2 x^T Lambda_h x and
    the sampled sine vectors are eigenvectors of Lambda_h with squared norm
    1/h, so E[QV] = h sum_j mu_j Var(c_j).
    """
    v = np.asarray(modal_variances, dtype=np.float64)
    J = v.shape[-1]
    h = 1.0 / (J + 1)
    return float(h * np.sum(fd_laplacian_eigenvalues(J) * v))


def batch_means(series, n_batches: int = 50):
    """Mean and batch-means standard error along axis 0.

    Leading dimension is time; any remaining axes are pooled as independent
    chains (their batch means are averaged together).
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[0]
    if n < 2 * n_batches:
        n_batches = max(2, n // 2)
    b = n // n_batches
    x = x[: b * n_batches]
    means = x.reshape((n_batches, b) + x.shape[1:]).mean(axis=1)
    means = means.reshape(n_batches, -1)
    k = means.shape[1]
    overall = float(means.mean())
    se = float(means.std(ddof=1) / np.sqrt(n_batches * k))
    return overall, se


@dataclass
class RateFit:
    taus: np.ndarray
    errors: np.ndarray
    slope: float = float("nan")
    intercept: float = float("nan")
    residual: float = float("nan")
    stderr: Optional[np.ndarray] = None
    used: Optional[np.ndarray] = None
    note: str = ""

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.slope))

    @property
    def constant(self) -> float:
        return float(np.exp(self.intercept))


def fit_rate(taus, errors) -> RateFit:
    """Least-squares slope of log(error) against log(tau)."""
    taus = np.asarray(taus, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if taus.shape != errors.shape or taus.ndim != 1:
        raise ValueError("taus and errors must be 1-D arrays of equal length")
    if taus.size < 3:
        raise ValueError("need at least 3 points to fit a rate")
    if np.any(~(taus > 0)) or np.any(~(errors > 0)):
        raise ValueError("taus and errors must be strictly positive")
    X = np.log(taus)
    Y = np.log(errors)
    A = np.vstack([X, np.ones_like(X)]).T
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - Y) ** 2)))
    return RateFit(taus, errors, float(coef[0]), float(coef[1]), resid, used=np.ones(taus.size, bool))


def _filtered_fit(taus, errors, stderr, keep, note_if_refused) -> RateFit:
    taus = np.asarray(taus, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    keep = np.asarray(keep, dtype=bool)
    if keep.sum() < 3:
        return RateFit(taus, errors, stderr=stderr, used=keep, note=note_if_refused)
    fit = fit_rate(taus[keep], errors[keep])
    return RateFit(taus, errors, fit.slope, fit.intercept, fit.residual, stderr, keep)


def deterministic_weak_error(op, taus: Sequence[float], T: Optional[float], scheme: str = "modified",
                             alpha: float = 0.0, floor: float = 1e-13) -> RateFit:
    """Bias of E|X|_alpha^2 for F = 0 and x0 = 0, from closed-form variances.

    ``T=None`` compares stationary laws.  Points with error below ``floor``
    are treated as round-off and excluded from the fit.
    """
    taus = np.asarray(taus, dtype=np.float64)
    if taus.size < 3:
        raise ValueError("need at least 3 step sizes")
    lam = _lambdas_of(op)
    weights = lam ** (2.0 * alpha)
    ref_scheme = "exact"
    errors = np.empty(taus.size)
    for k, tau in enumerate(taus):
        if T is None:
            v = mode_variances(scheme, lam, tau, None).variances
            vref = mode_variances(ref_scheme, lam, None, None).variances
        else:
            N = int(round(T / tau))
            if abs(N * tau - T) > 1e-9 * T:
                raise ValueError(f"T={T} is not a multiple of tau={tau}")
            v = mode_variances(scheme, lam, tau, N).variances
            vref = mode_variances(ref_scheme, lam, T, 1).variances
        errors[k] = abs(np.sum(weights * (v - vref)))
    return _filtered_fit(taus, errors, None, errors > floor,
                         "fewer than 3 errors above the round-off floor")


# Coupled Monte Carlo engine ------------------------------------------------

def modal_norm_sq(values: np.ndarray) -> np.ndarray:
    """Squared discrete L2 norm h sum x_i^2, computed from sine coefficients."""
    return np.sum(values**2, axis=-1)


def phi_gaussian(values: np.ndarray) -> np.ndarray:
    """Test function exp(-|x|_h^2) on modal coefficients."""
    return np.exp(-modal_norm_sq(values))


@dataclass
class CoupledSetup:
    """Shared Brownian path for a fine exponential reference and coarse schemes.

    Time is cut into base intervals of length ``hb`` (half the smallest
    coarse step), each split into ``r`` reference steps.  Per mode and per
    reference step the pair (Z, dB) is sampled exactly, where Z is the
    stochastic convolution over the step and dB the Wiener increment.
    Within a base interval only the Z's and the summed dB are needed, so
    the summed dB is drawn from its conditional law given the Z's.
    """

    op: object
    p: ProblemSpec
    x0: np.ndarray
    T: float
    taus: np.ndarray
    schemes: tuple
    tau_ref: float

    def __post_init__(self):
        self.taus = np.asarray(sorted(self.taus, reverse=True), dtype=np.float64)
        self.hb = float(self.taus.min()) / 2.0
        r = self.hb / self.tau_ref
        if abs(r - round(r)) > 1e-9 or round(r) < 1:
            raise ValueError("tau_ref must divide half of the smallest coarse step")
        self.r = int(round(r))
        nb = self.T / self.hb
        if abs(nb - round(nb)) > 1e-9:
            raise ValueError("T must be a multiple of every step size")
        self.n_base = int(round(nb))
        self.per_half = []
        for tau in self.taus:
            m = tau / (2.0 * self.hb)
            if abs(m - round(m)) > 1e-9:
                raise ValueError(f"tau={tau} is not a multiple of the smallest step")
            self.per_half.append(int(round(m)))
        for s in self.schemes:
            if s not in ("modified", "standard", "exponential", "exact_ou"):
                raise ValueError(f"scheme {s!r} not supported by the coupled engine")
        lam = self.op.lambdas
        hf = self.tau_ref
        self.decay_f = np.exp(-lam * hf)
        self.drift_f = -np.expm1(-lam * hf) / lam
        vz = -np.expm1(-2.0 * lam * hf) / (2.0 * lam)
        cov = -np.expm1(-lam * hf) / lam
        self.z_std = np.sqrt(vz)
        self.dw_on_z = cov / vz
        self.dw_resid_std = np.sqrt(np.maximum(self.r * (hf - cov * cov / vz), 0.0))
        self.decay_b = np.exp(-lam * self.hb)
        self.coarse = []
        for tau in self.taus:
            a = 1.0 / (1.0 + tau * lam)
            self.coarse.append({
                "tau": tau,
                "a": a,
                "sqrt_a": np.sqrt(a),
                "decay": np.exp(-lam * tau),
                "edrift": -np.expm1(-lam * tau) / lam,
            })

    def _drift(self, x):
        if self.p.is_zero:
            return np.zeros_like(x)
        J = x.shape[-1]
        nodal = scipy.fft.dst(x, type=1, norm="ortho", axis=-1) * np.sqrt(J + 1)
        return scipy.fft.dst(self.p.f(nodal), type=1, norm="ortho", axis=-1) / np.sqrt(J + 1)

    def simulate(self, stream: NoiseStream, n: int):
        """Final states of the reference and of every (scheme, tau) pair."""
        J = self.op.J
        x_ref = np.broadcast_to(self.x0, (n, J)).copy()
        states = {(s, k): x_ref.copy() for s in self.schemes for k in range(len(self.taus))}
        need_conv = any(s in ("exponential", "exact_ou") for s in self.schemes)
        dw_half = [np.zeros((n, J)) for _ in self.taus]
        dw_first = [np.zeros((n, J)) for _ in self.taus]
        conv = [np.zeros((n, J)) for _ in self.taus] if need_conv else None
        for b in range(self.n_base):
            zsum = np.zeros((n, J))
            sb = np.zeros((n, J)) if need_conv else None
            for _ in range(self.r):
                z = self.z_std * stream.normal((n, J))
                x_ref = self.decay_f * x_ref + self.drift_f * self._drift(x_ref) + z
                zsum += z
                if need_conv:
                    sb = self.decay_f * sb + z
            dw = self.dw_on_z * zsum + self.dw_resid_std * stream.normal((n, J))
            for k, c in enumerate(self.coarse):
                m = self.per_half[k]
                dw_half[k] += dw
                if need_conv:
                    conv[k] = self.decay_b * conv[k] + sb
                pos = b % (2 * m)
                if pos == m - 1:
                    dw_first[k] = dw_half[k]
                    dw_half[k] = np.zeros((n, J))
                elif pos == 2 * m - 1:
                    dw1, dw2 = dw_first[k], dw_half[k]
                    for s in self.schemes:
                        x = states[(s, k)]
                        if s == "modified":
                            x = c["a"] * (x + c["tau"] * self._drift(x)) + c["a"] * dw1 + c["sqrt_a"] * dw2
                        elif s == "standard":
                            x = c["a"] * (x + c["tau"] * self._drift(x) + dw1 + dw2)
                        elif s == "exponential":
                            x = c["decay"] * x + c["edrift"] * self._drift(x) + conv[k]
                        else:
                            x = c["decay"] * x + conv[k]
                        states[(s, k)] = x
                    dw_half[k] = np.zeros((n, J))
                    if need_conv:
                        conv[k] = np.zeros((n, J))
        return x_ref, states


def coupled_statistics(setup: CoupledSetup, M: int, seed: int = 0, phi: Optional[Callable] = None,
                       block_size: int = DEFAULT_BLOCK, threads: Optional[int] = None) -> Dict[str, np.ndarray]:
    """Per-replica phi values and distances to the reference.

    Returns a dict with ``phi_ref`` of shape (M,), and ``phi`` and ``dist``
    of shape (M, n_schemes, n_taus).
    """
    S, K = len(setup.schemes), len(setup.taus)

    def block(stream, n):
        x_ref, states = setup.simulate(stream, n)
        out = np.empty((n, 1 + 2 * S * K))
        out[:, 0] = phi(x_ref) if phi is not None else np.nan
        for i, s in enumerate(setup.schemes):
            for k in range(K):
                x = states[(s, k)]
                col = 1 + i * K + k
                out[:, col] = phi(x) if phi is not None else np.nan
                out[:, 1 + S * K + col - 1] = np.sqrt(modal_norm_sq(x - x_ref))
        return out

    raw = run_replicas(block, M, seed, block_size, threads)
    return {
        "phi_ref": raw[:, 0],
        "phi": raw[:, 1:1 + S * K].reshape(M, S, K),
        "dist": raw[:, 1 + S * K:].reshape(M, S, K),
    }


def _mean_se(samples, axis=0):
    M = samples.shape[axis]
    mean = samples.mean(axis=axis)
    if M < 2:
        return mean, np.full_like(mean, np.inf)
    return mean, samples.std(axis=axis, ddof=1) / np.sqrt(M)


@dataclass
class MCRateResult:
    fits: Dict[str, RateFit]
    raw: Dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def mc_weak_error(op, p: ProblemSpec, taus, T: float, M: int, seed: int = 0,
                  phi: Callable = phi_gaussian, x0=None, schemes=("modified",),
                  tau_ref: Optional[float] = None, threads: Optional[int] = None,
                  block_size: int = DEFAULT_BLOCK) -> MCRateResult:
    """Weak errors |E phi(X_N) - E phi(X_ref)| with common random numbers.

    The reference is exponential Euler at ``tau_ref`` (default min(taus)/8)
    on the same Brownian path.  Standard errors come from the per-replica
    differences; only points at least 3 standard errors above zero enter the
    fit.
    """
    taus = np.asarray(sorted(taus, reverse=True), dtype=np.float64)
    if tau_ref is None:
        tau_ref = taus.min() / 8.0
    if tau_ref > taus.min() / 8.0 * (1 + 1e-12):
        raise ValueError("tau_ref must not exceed min(taus)/8")
    x0 = np.zeros(op.J) if x0 is None else np.asarray(x0, dtype=np.float64)
    setup = CoupledSetup(op, p, x0, T, taus, tuple(schemes), tau_ref)
    raw = coupled_statistics(setup, M, seed, phi, block_size, threads)
    fits = {}
    for i, s in enumerate(schemes):
        diff = raw["phi"][:, i, :] - raw["phi_ref"][:, None]
        mean, se = _mean_se(diff)
        err = np.abs(mean)
        keep = np.isfinite(se) & (err >= 3.0 * se) & (err > 0)
        fits[s] = _filtered_fit(taus, err, se, keep,
                                "fewer than 3 points above 3 standard errors; fit refused")
    return MCRateResult(fits, raw)


def strong_error(op, p: ProblemSpec, taus, T: float, M: int, seed: int = 0, x0=None,
                 schemes=("exponential", "standard"), tau_ref: Optional[float] = None,
                 threads: Optional[int] = None, block_size: int = DEFAULT_BLOCK) -> MCRateResult:
    """Mean distance E|X_N - X_ref| to a fine exponential reference on the same path."""
    if op.kind != "spectral":
        raise ValueError("strong errors are computed with the spectral operator")
    taus = np.asarray(sorted(taus, reverse=True), dtype=np.float64)
    if tau_ref is None:
        tau_ref = taus.min() / 8.0
    x0 = np.zeros(op.J) if x0 is None else np.asarray(x0, dtype=np.float64)
    setup = CoupledSetup(op, p, x0, T, taus, tuple(schemes), tau_ref)
    raw = coupled_statistics(setup, M, seed, None, block_size, threads)
    fits = {}
    for i, s in enumerate(schemes):
        mean, se = _mean_se(raw["dist"][:, i, :])
        keep = np.isfinite(se) & (mean >= 3.0 * se) & (mean > 1e-13)
        fits[s] = _filtered_fit(taus, mean, se, keep,
                                "fewer than 3 errors above noise; fit refused")
    return MCRateResult(fits, raw)
