"""Time steppers for dX = -Lambda X dt + F(X) dt + dW.

All step functions are pure: they take the current state and explicit
Gaussian draws and return the next state.  :func:`run_trajectory` wires a
stepper to a :class:`~modeuler.noise.NoiseStream`.

Schemes
-------
modified          A(x + tau F) + sqrt(tau)(B1 g1 + B2 g2)
modified_bform    A(x + tau F) + sqrt(tau) B g       (spectral, one draw)
modified_expform  exact step of the modified equation (spectral)
standard          A(x + tau F + sqrt(tau) g)
exponential       accelerated exponential Euler (spectral)
exact_ou          exact Ornstein-Uhlenbeck transition, F must vanish (spectral)
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .modified_equation import compute_modified_spectra, modified_spectra_from
from .noise import NoiseStream, draw_coupled_pair, draw_cylindrical
from .operators import (
    MODAL,
    NODAL,
    FieldState,
    ResolventFactors,
    apply_A_tau,
    factorize_resolvent,
    sample_modified_noise,
    to_nodal,
)
from .problems import ProblemSpec, apply_drift

SCHEMES = ("modified", "modified_bform", "modified_expform", "standard", "exponential", "exact_ou")
SPECTRAL_ONLY = ("modified_bform", "modified_expform", "exponential", "exact_ou")


@dataclass(frozen=True)
class SchemeConfig:
    tau: float
    N: int
    scheme: str = "modified"

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError("N must be a non-negative integer")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")

    @property
    def T(self) -> float:
        return self.N * self.tau

    @classmethod
    def from_horizon(cls, tau: float, T: float, scheme: str = "modified") -> "SchemeConfig":
        N = int(round(T / tau))
        if abs(N * tau - T) > 1e-9 * max(1.0, abs(T)):
            raise ValueError(f"T={T} is not an integer multiple of tau={tau}")
        return cls(tau, N, scheme)


def _require_spectral(op, name):
    if op.kind != "spectral":
        raise ValueError(f"{name} needs the spectral operator")


def _drift_term(p: ProblemSpec, x: FieldState, tau: float) -> np.ndarray:
    if p.is_zero:
        return x.values
    return x.values + tau * apply_drift(p, x).values


def step_modified(f: ResolventFactors, p: ProblemSpec, x: FieldState, g1: FieldState, g2: FieldState) -> FieldState:
    x.require(f.representation)
    drift = apply_A_tau(f, x.like(_drift_term(p, x, f.tau)))
    return drift + sample_modified_noise(f, g1, g2)


def bform_noise_scale(tau: float, lambdas) -> np.ndarray:
    """Per-mode B_tau = sqrt(2 + tau lambda) / (sqrt(2)(1 + tau lambda))."""
    z = tau * np.asarray(lambdas)
    return np.sqrt(2.0 + z) / (np.sqrt(2.0) * (1.0 + z))


def step_modified_bform(f: ResolventFactors, p: ProblemSpec, x: FieldState, g: FieldState) -> FieldState:
    _require_spectral(f.op, "the single-noise modified form")
    x.require(MODAL)
    g.require(MODAL)
    drift = apply_A_tau(f, x.like(_drift_term(p, x, f.tau)))
    return drift.like(drift.values + np.sqrt(f.tau) * bform_noise_scale(f.tau, f.op.lambdas) * g.values)


def step_modified_expform(f: ResolventFactors, p: ProblemSpec, x: FieldState, g: FieldState, spectra=None) -> FieldState:
    """Exact step of the modified equation over one interval of length tau."""
    _require_spectral(f.op, "the modified-equation form")
    x.require(MODAL)
    g.require(MODAL)
    if spectra is None:
        spectra = compute_modified_spectra(f.op, f.tau)
    out = spectra.semigroup(f.tau) * x.values
    if not p.is_zero:
        out = out + spectra.drift_factor() * apply_drift(p, x).values
    return x.like(out + np.sqrt(spectra.noise_variance()) * g.values)


def step_standard(f: ResolventFactors, p: ProblemSpec, x: FieldState, g: FieldState) -> FieldState:
    x.require(f.representation)
    g.require(f.representation)
    return apply_A_tau(f, x.like(_drift_term(p, x, f.tau) + np.sqrt(f.tau) * g.values))


@dataclass(frozen=True)
class ExponentialFactors:
    """Per-mode coefficients of the accelerated exponential Euler step."""

    tau: float
    op: object
    decay: np.ndarray
    drift: np.ndarray
    noise_std: np.ndarray

    representation = MODAL


def exponential_factors(op, tau: float) -> ExponentialFactors:
    _require_spectral(op, "exponential Euler")
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    lam = op.lambdas
    em1 = -np.expm1(-tau * lam)
    var = -np.expm1(-2.0 * tau * lam) / (2.0 * lam)
    return ExponentialFactors(tau, op, np.exp(-tau * lam), em1 / lam, np.sqrt(var))


def step_exponential(e: ExponentialFactors, p: ProblemSpec, x: FieldState, noise) -> FieldState:
    """One exponential Euler step; ``noise`` is a cylindrical draw or a stream."""
    x.require(MODAL)
    if isinstance(noise, NoiseStream):
        noise = draw_cylindrical(noise, x.J, MODAL, x.values.shape[:-1] or None)
    noise.require(MODAL)
    out = e.decay * x.values + e.noise_std * noise.values
    if not p.is_zero:
        out = out + e.drift * apply_drift(p, x).values
    return x.like(out)


def exact_ou(e: ExponentialFactors, x: FieldState, g: FieldState) -> FieldState:
    """Exact OU transition over tau (the exponential step with F = 0)."""
    x.require(MODAL)
    g.require(MODAL)
    return x.like(e.decay * x.values + e.noise_std * g.values)


def one_step_coefficients(scheme: str, tau: float, lambdas):
    """Per-mode (mean multiplier, drift multiplier, noise variance) of one step.

    The one-step law is N(m x + d F, v) mode by mode when F is frozen.
    """
    lam = np.asarray(lambdas, dtype=np.float64)
    z = tau * lam
    a = 1.0 / (1.0 + z)
    if scheme == "modified":
        return a, tau * a, 0.5 * tau * (a * a + a)
    if scheme == "modified_bform":
        return a, tau * a, tau * bform_noise_scale(tau, lam) ** 2
    if scheme == "modified_expform":
        sp = modified_spectra_from(lam, tau)
        return sp.semigroup(tau), sp.drift_factor(), sp.noise_variance()
    if scheme == "standard":
        return a, tau * a, tau * a * a
    if scheme in ("exponential", "exact_ou"):
        return np.exp(-z), -np.expm1(-z) / lam, -np.expm1(-2.0 * z) / (2.0 * lam)
    raise ValueError(f"unknown scheme {scheme!r}")


def variance_recursion(scheme: str, tau: float, lambdas, v0, N: int) -> np.ndarray:
    """Iterate v <- m^2 v + noise variance N times (F = 0)."""
    m, _, q = one_step_coefficients(scheme, tau, lambdas)
    v = np.array(v0, dtype=np.float64) * np.ones_like(m)
    for _ in range(N):
        v = m * m * v + q
    return v


class Stepper:
    """Binds a scheme to an operator, a problem and a step size."""

    def __init__(self, scheme: str, op, p: ProblemSpec, tau: float, backend: Optional[str] = None):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        if scheme in SPECTRAL_ONLY:
            _require_spectral(op, scheme)
        if scheme == "exact_ou" and not p.is_zero:
            raise ValueError("exact_ou is only available for F = 0")
        self.scheme, self.op, self.p, self.tau = scheme, op, p, float(tau)
        self.representation = op.representation
        if scheme in ("exponential", "exact_ou"):
            self.factors = exponential_factors(op, tau)
        else:
            self.factors = factorize_resolvent(op, tau, backend)
        self.spectra = compute_modified_spectra(op, tau) if scheme == "modified_expform" else None

    def __call__(self, x: FieldState, stream: NoiseStream) -> FieldState:
        batch = x.values.shape[:-1] or None
        J, rep = x.J, self.representation
        s = self.scheme
        if s == "modified":
            g1 = draw_cylindrical(stream, J, rep, batch)
            g2 = draw_cylindrical(stream, J, rep, batch)
            return step_modified(self.factors, self.p, x, g1, g2)
        g = draw_cylindrical(stream, J, rep, batch)
        if s == "modified_bform":
            return step_modified_bform(self.factors, self.p, x, g)
        if s == "modified_expform":
            return step_modified_expform(self.factors, self.p, x, g, self.spectra)
        if s == "standard":
            return step_standard(self.factors, self.p, x, g)
        if s == "exponential":
            return step_exponential(self.factors, self.p, x, g)
        return exact_ou(self.factors, x, g)


@dataclass
class Trajectory:
    final: FieldState
    times: Optional[np.ndarray] = None
    path: Optional[np.ndarray] = None


def _guard(x: FieldState, n: int, scheme: str):
    if not np.all(np.isfinite(x.values)):
        raise FloatingPointError(f"{scheme} produced non-finite values at step {n}")


def run_trajectory(
    cfg: SchemeConfig,
    op,
    p: ProblemSpec,
    x0: FieldState,
    stream: NoiseStream,
    record: str = "final",
    backend: Optional[str] = None,
):
    """Iterate the configured scheme N times from x0.

    ``record`` is ``none`` (returns None), ``final`` (returns the final
    state) or ``path`` (returns a :class:`Trajectory` with every step).
    """
    if record not in ("none", "final", "path"):
        raise ValueError(f"unknown record mode {record!r}")
    x0.require(op.representation)
    if x0.J != op.J:
        raise ValueError("initial state and operator sizes differ")
    step = Stepper(cfg.scheme, op, p, cfg.tau, backend)
    x = x0
    path = [x.values.copy()] if record == "path" else None
    for n in range(1, cfg.N + 1):
        x = step(x, stream)
        _guard(x, n, cfg.scheme)
        if path is not None:
            path.append(x.values.copy())
    if record == "none":
        return None
    if record == "final":
        return x
    return Trajectory(x, cfg.tau * np.arange(cfg.N + 1), np.stack(path))


def run_coupled(op, p: ProblemSpec, x0: FieldState, tau: float, N: int, stream: NoiseStream,
                record: bool = False, backend: Optional[str] = None):
    """Modified and standard schemes driven by the same Wiener increments.

    Each step draws (g1, g2); the modified scheme consumes both and the
    standard scheme consumes (g1 + g2)/sqrt(2).  Returns the two final
    states, or two :class:`Trajectory` objects when ``record`` is set.
    """
    x0.require(op.representation)
    f = factorize_resolvent(op, tau, backend)
    xm = xs = x0
    paths = ([x0.values.copy()], [x0.values.copy()]) if record else None
    batch = x0.values.shape[:-1] or None
    for n in range(1, N + 1):
        g1, g2, g = draw_coupled_pair(stream, x0.J, op.representation, batch)
        xm = step_modified(f, p, xm, g1, g2)
        xs = step_standard(f, p, xs, g)
        _guard(xm, n, "modified")
        _guard(xs, n, "standard")
        if record:
            paths[0].append(xm.values.copy())
            paths[1].append(xs.values.copy())
    if not record:
        return xm, xs
    times = tau * np.arange(N + 1)
    return (Trajectory(xm, times, np.stack(paths[0])), Trajectory(xs, times, np.stack(paths[1])))


def write_path_csv(path: str, traj: Trajectory, representation: str, header_lines=()) -> None:
    """Write t, xi_1..xi_J rows with nodal values."""
    values = traj.path
    if representation == MODAL:
        values = to_nodal(FieldState(values, MODAL)).values
    J = values.shape[-1]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"xi_{i}" for i in range(1, J + 1)])
        for t, row in zip(traj.times, values):
            writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
