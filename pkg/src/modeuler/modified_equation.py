"""Spectra of the modified equation solved exactly by the modified Euler scheme.

With lambda_tau = log(1 + tau lambda) / tau and q_tau = lambda_tau / lambda,
the linear SPDE dX = -Lambda_tau X dt + Q_tau F dt + Q_tau^{1/2} dW sampled at
multiples of tau has the same one-step Gaussian law as the modified Euler
scheme.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import ResolventFactors


@dataclass(frozen=True)
class ModifiedSpectra:
    tau: float
    lambdas: np.ndarray
    lambda_tau: np.ndarray
    q_tau: np.ndarray

    def semigroup(self, t: float) -> np.ndarray:
        """Per-mode exp(-t lambda_tau)."""
        return np.exp(-t * self.lambda_tau)

    def drift_factor(self) -> np.ndarray:
        """Per-mode Lambda_tau^{-1}(1 - exp(-tau Lambda_tau)) Q_tau; equals tau/(1 + tau lambda)."""
        return -np.expm1(-self.tau * self.lambda_tau) * self.q_tau / self.lambda_tau

    def noise_variance(self) -> np.ndarray:
        """Per-mode variance q (1 - exp(-2 tau lambda_tau)) / (2 lambda_tau)."""
        return self.q_tau * -np.expm1(-2.0 * self.tau * self.lambda_tau) / (2.0 * self.lambda_tau)


def modified_spectra_from(lambdas, tau: float) -> ModifiedSpectra:
    tau = float(tau) if np.ndim(tau) == 0 else np.asarray(tau, dtype=np.float64)
    if not np.all(np.asarray(tau) > 0.0):
        raise ValueError("tau must be positive")
    lambdas = np.asarray(lambdas, dtype=np.float64)
    log_term = np.log1p(tau * lambdas)
    return ModifiedSpectra(tau, lambdas, log_term / tau, log_term / (tau * lambdas))


def compute_modified_spectra(op, tau: float) -> ModifiedSpectra:
    if op.kind != "spectral":
        raise ValueError("modified spectra are defined for the spectral operator")
    return modified_spectra_from(op.lambdas, tau)


@dataclass(frozen=True)
class IdentityReport:
    violations: dict
    max_errors: dict

    @property
    def ok(self) -> bool:
        return not any(len(v) for v in self.violations.values())


def _rel(a, b):
    return np.abs(a - b) / np.maximum(np.abs(b), 1e-300)


def check_identities(spectra: ModifiedSpectra, f: ResolventFactors | None = None, tol: float = 1e-12) -> IdentityReport:
    """Check the per-mode identities tying the scheme to the modified equation.

    (i)   1 - a^2 = 2 tau lambda b^2
    (ii)  tau b^2 / (1 - a^2) = 1 / (2 lambda)
    (iii) q_tau / lambda_tau = 1 / lambda
    (iv)  exp(-tau lambda_tau) = a and the drift factor equals tau a

    with a = 1/(1 + tau lambda) and b^2 = (2 + tau lambda)/(2 (1 + tau lambda)^2).
    Returns the indices of violating modes for each identity.
    """
    tau, lam = spectra.tau, spectra.lambdas
    if f is not None:
        if f.spectral_scalars is None:
            raise ValueError("identities are checked on spectral factors")
        if f.tau != tau:
            raise ValueError("factors and spectra use different steps")
        a = f.spectral_scalars
    else:
        a = 1.0 / (1.0 + tau * lam)
    z = tau * lam
    b2 = (2.0 + z) / (2.0 * (1.0 + z) ** 2)
    # 1 - a^2 written as z(2+z)/(1+z)^2 avoids cancellation for small z
    one_minus_a2 = z * (2.0 + z) * a * a
    errors = {
        "resolvent_noise": _rel(one_minus_a2, 2.0 * z * b2),
        "stationary_variance": _rel(tau * b2 / one_minus_a2, 1.0 / (2.0 * lam)),
        "q_over_lambda_tau": _rel(spectra.q_tau / spectra.lambda_tau, 1.0 / lam),
        "semigroup": _rel(spectra.semigroup(tau), a),
        "drift_factor": _rel(spectra.drift_factor(), tau * a),
        "noise_variance": _rel(spectra.noise_variance(), tau * b2),
    }
    violations = {k: np.flatnonzero(~(e <= tol)) for k, e in errors.items()}
    return IdentityReport(violations, {k: float(np.max(e)) for k, e in errors.items()})


def auxiliary_two_step_variance(tau: float, lambdas) -> np.ndarray:
    """Noise variance after two auxiliary half steps of size s = tau/2.

    The auxiliary step is X <- A~(X + sqrt(s) G) with A~ = (I + 2 s Lambda)^{-1/2}.
    The first increment passes through A~ twice and the second once, so the
    variance is s (A~^4 + A~^2).  Since A~^2 = (I + tau Lambda)^{-1} this
    reproduces one modified Euler step.
    """
    lam = np.asarray(lambdas, dtype=np.float64)
    s = 0.5 * tau
    half = (1.0 + 2.0 * s * lam) ** -0.5
    return s * (half**4 + half**2)
