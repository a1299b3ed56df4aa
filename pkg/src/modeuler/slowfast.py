"""Asymptotic-preserving scheme for slow-fast systems

    dX = -Lambda X dt + G(X, Y) dt
    dY = -(1/eps) Lambda Y dt + sigma(X) sqrt(1/eps) dW

The fast component uses the modified Euler noise at step tau/eps, which
keeps its conditional invariant law exact for every eps.  As eps -> 0 at
fixed tau the scheme turns into the limiting scheme

    X_{n+1} = A_tau(X_n + tau G(X_n, sigma(X_n) Z_n)),   Z_n ~ nu,

a discretization of the averaged equation with drift E_nu[G(x, sigma(x) Z)].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .diagnostics import _filtered_fit
from .noise import DEFAULT_BLOCK, NoiseStream, draw_cylindrical, run_replicas
from .operators import (
    NODAL,
    FieldState,
    apply_A_tau,
    factorize_operator,
    factorize_resolvent,
    grid,
    sample_invariant,
    sample_modified_noise,
    to_modal,
    to_nodal,
)
from .problems import SlowFastSpec, apply_G, evaluate_sigma


@dataclass(frozen=True)
class SlowFastState:
    X: FieldState
    Y: FieldState
    epsilon: float

    def __post_init__(self):
        self.Y.require(self.X.representation)
        if self.X.J != self.Y.J:
            raise ValueError("slow and fast components must have equal sizes")


class APScheme:
    """Factorizations for one (operator, tau, eps) triple.

    ``noise`` selects the fast update: ``modified`` (the AP scheme) or
    ``standard`` (single-noise linear-implicit Euler, not AP).
    """

    def __init__(self, op, sf: SlowFastSpec, tau: float, noise: str = "modified", backend=None):
        if not sf.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if noise not in ("modified", "standard"):
            raise ValueError(f"unknown fast noise {noise!r}")
        self.op, self.sf, self.tau, self.noise = op, sf, float(tau), noise
        self.slow = factorize_resolvent(op, tau, backend)
        self.fast = factorize_resolvent(op, tau / sf.epsilon, backend)

    def step(self, state: SlowFastState, stream: NoiseStream) -> SlowFastState:
        x, y = state.X, state.Y
        rep, J = x.representation, x.J
        batch = x.values.shape[:-1] or None
        sig = evaluate_sigma(self.sf, x)[..., None]
        if self.noise == "modified":
            g1 = draw_cylindrical(stream, J, rep, batch)
            g2 = draw_cylindrical(stream, J, rep, batch)
            kick = sample_modified_noise(self.fast, g1, g2).values
            y_new = y.like(apply_A_tau(self.fast, y).values + sig * kick)
        else:
            g = draw_cylindrical(stream, J, rep, batch)
            scale = np.sqrt(self.fast.tau) * sig
            y_new = apply_A_tau(self.fast, y.like(y.values + scale * g.values))
        drift = apply_G(self.sf, x, y_new)
        x_new = apply_A_tau(self.slow, x.like(x.values + self.tau * drift.values))
        return SlowFastState(x_new, y_new, state.epsilon)


def step_ap(state: SlowFastState, sf: SlowFastSpec, op, tau: float, stream: NoiseStream, scheme=None):
    """One AP step; pass a prebuilt :class:`APScheme` to reuse factorizations."""
    if scheme is None:
        scheme = APScheme(op, sf, tau)
    return scheme.step(state, stream)


def step_ap_standard(state: SlowFastState, sf: SlowFastSpec, op, tau: float, stream: NoiseStream, scheme=None):
    """Same slow update, but the fast variable uses the standard Euler noise."""
    if scheme is None:
        scheme = APScheme(op, sf, tau, noise="standard")
    return scheme.step(state, stream)


class LimitingScheme:
    """X <- A_tau(X + tau G(X, sigma(X) Z)) with a fresh Z ~ nu per step.

    On the spectral operator Z has modal variances 1/(2 lambda_j).  On the
    finite-difference operator Z = M^{-T} g / sqrt(2) with M M^T = Lambda_h,
    which is the invariant law of the fast modified Euler update.
    """

    def __init__(self, op, sf: SlowFastSpec, tau: float, backend=None):
        self.op, self.sf, self.tau = op, sf, float(tau)
        self.factors = factorize_resolvent(op, tau, backend)
        self.op_factor = factorize_operator(op, backend) if op.kind == "fd" else None
        self.backend = backend

    def draw_z(self, stream: NoiseStream, J: int, batch) -> FieldState:
        g = draw_cylindrical(stream, J, self.op.representation, batch)
        return sample_invariant(self.op, g, self.op_factor, self.backend)

    def step(self, x: FieldState, stream: NoiseStream) -> FieldState:
        batch = x.values.shape[:-1] or None
        z = self.draw_z(stream, x.J, batch)
        sig = evaluate_sigma(self.sf, x)[..., None]
        drift = apply_G(self.sf, x, z.like(sig * z.values))
        return apply_A_tau(self.factors, x.like(x.values + self.tau * drift.values))


def step_limiting(x: FieldState, sf: SlowFastSpec, op, tau: float, stream: NoiseStream, scheme=None):
    if scheme is None:
        scheme = LimitingScheme(op, sf, tau)
    return scheme.step(x, stream)


def averaged_drift_mc(x: FieldState, sf: SlowFastSpec, op, M: int, stream: NoiseStream, block: int = 10_000):
    """Monte Carlo estimate of E_nu[G(x, sigma(x) Z)] on the grid.

    Returns (mean, standard error) as nodal fields.
    """
    if M < 1:
        raise ValueError("M must be positive")
    lim = LimitingScheme(op, sf, 1.0)
    xs = x if x.values.ndim == 1 else None
    if xs is None:
        raise ValueError("averaged drift is evaluated at a single state")
    total = np.zeros(x.J)
    total_sq = np.zeros(x.J)
    done = 0
    while done < M:
        n = min(block, M - done)
        z = lim.draw_z(stream, x.J, n)
        xb = x.like(np.broadcast_to(x.values, (n, x.J)))
        sig = evaluate_sigma(sf, xb)[..., None]
        g = apply_G(sf, xb, z.like(sig * z.values))
        g = g if g.representation == NODAL else to_nodal(g)
        total += g.values.sum(axis=0)
        total_sq += (g.values**2).sum(axis=0)
        done += n
    mean = total / M
    var = np.maximum(total_sq / M - mean**2, 0.0) * M / max(M - 1, 1)
    se = np.sqrt(var / M) if M > 1 else np.full(x.J, np.inf)
    return FieldState(mean, NODAL), FieldState(se, NODAL)


def cos_averaged_drift(xi) -> np.ndarray:
    """E cos(Z(xi)) for Z ~ nu: exp(-xi(1 - xi)/4) since Var Z(xi) = xi(1 - xi)/2."""
    xi = np.asarray(xi, dtype=np.float64)
    return np.exp(-xi * (1.0 - xi) / 4.0)


def linear_phi(values_nodal: np.ndarray) -> np.ndarray:
    """phi(x) = h sum_i x_i, a Lipschitz test function."""
    return np.sum(values_nodal, axis=-1) / (values_nodal.shape[-1] + 1)


def _nodal(op, values):
    if op.representation == NODAL:
        return values
    return to_nodal(FieldState(values, op.representation)).values


@dataclass
class SweepResult:
    epsilons: np.ndarray
    ap_means: np.ndarray
    ap_se: np.ndarray
    limit_mean: float
    limit_se: float
    standard_mean: float
    standard_se: float

    @property
    def gaps(self) -> np.ndarray:
        return np.abs(self.ap_means - self.limit_mean)

    @property
    def gap_se(self) -> np.ndarray:
        return np.sqrt(self.ap_se**2 + self.limit_se**2)

    @property
    def standard_gap(self) -> float:
        return abs(self.standard_mean - self.limit_mean)

    @property
    def standard_gap_se(self) -> float:
        return float(np.hypot(self.standard_se, self.limit_se))

    def monotone_within(self, k: float = 2.0) -> bool:
        """Each gap is no larger than the previous one plus k combined SEs."""
        g, s = self.gaps, self.gap_se
        return bool(np.all(g[1:] <= g[:-1] + k * np.hypot(s[1:], s[:-1])))

    def reaches_floor(self, k: float = 3.0) -> bool:
        return bool(self.gaps[-1] <= k * self.gap_se[-1])


def _mean_se(samples):
    M = samples.shape[0]
    if M < 2:
        return float(samples.mean()), float("inf")
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(M))


def ap_epsilon_sweep(op, sf: SlowFastSpec, x0: np.ndarray, y0: np.ndarray, tau: float, n_steps: int,
                     epsilons: Sequence[float], M: int, seed: int = 0,
                     phi: Callable = linear_phi, threads: Optional[int] = None,
                     block_size: int = DEFAULT_BLOCK, backend=None) -> SweepResult:
    """E phi(X_n) for the AP scheme over an eps sweep, the limiting scheme,
    and the standard-noise variant at the smallest eps.

    Each run uses its own replica range so the estimates are independent.
    """
    epsilons = np.asarray(epsilons, dtype=np.float64)
    rep = op.representation

    def run_ap(eps, noise, first):
        scheme = APScheme(op, sf.with_epsilon(eps), tau, noise, backend)

        def block(stream, n):
            st = SlowFastState(FieldState(np.broadcast_to(x0, (n, op.J)).copy(), rep),
                               FieldState(np.broadcast_to(y0, (n, op.J)).copy(), rep), eps)
            for _ in range(n_steps):
                st = scheme.step(st, stream)
            return phi(_nodal(op, st.X.values))

        return _mean_se(run_replicas(block, M, seed, block_size, threads, first))

    n_blocks = -(-M // block_size)
    ap = [run_ap(eps, "modified", (k + 1) * n_blocks) for k, eps in enumerate(epsilons)]

    lim = LimitingScheme(op, sf, tau, backend)

    def lim_block(stream, n):
        x = FieldState(np.broadcast_to(x0, (n, op.J)).copy(), rep)
        for _ in range(n_steps):
            x = lim.step(x, stream)
        return phi(_nodal(op, x.values))

    limit = _mean_se(run_replicas(lim_block, M, seed, block_size, threads, 0))
    std = run_ap(float(epsilons.min()), "standard", (len(epsilons) + 1) * n_blocks)
    return SweepResult(epsilons, np.array([a[0] for a in ap]), np.array([a[1] for a in ap]),
                       limit[0], limit[1], std[0], std[1])


def averaged_reference(op, x0: np.ndarray, drift_nodal: np.ndarray, tau_ref: float, N_ref: int, backend=None):
    """Deterministic X <- A(X + tau_ref Gbar) with a state-independent drift."""
    f = factorize_resolvent(op, tau_ref, backend)
    if op.representation == NODAL:
        gbar = drift_nodal
    else:
        gbar = to_modal(FieldState(drift_nodal, NODAL)).values
    x = FieldState(np.array(x0, dtype=np.float64), op.representation)
    for _ in range(N_ref):
        x = apply_A_tau(f, x.like(x.values + tau_ref * gbar))
    return x


@dataclass
class ConsistencyResult:
    taus: np.ndarray
    means: np.ndarray
    se: np.ndarray
    references: np.ndarray
    fit: object

    @property
    def errors(self):
        return np.abs(self.means - self.references)


def limiting_consistency(op, sf: SlowFastSpec, x0: np.ndarray, T: float, taus: Sequence[float], M: int,
                         seed: int = 0, phi: Callable = linear_phi, refine: int = 16,
                         threads: Optional[int] = None, block_size: int = DEFAULT_BLOCK, backend=None):
    """Error of E phi(X_N^{0,tau}) against the averaged equation solved at tau/refine.

    The averaged drift is the closed form for G = cos(y), sigma = 1.
    """
    taus = np.asarray(sorted(taus, reverse=True), dtype=np.float64)
    gbar = cos_averaged_drift(grid(op.J))
    rep = op.representation
    means, ses, refs = [], [], []
    for k, tau in enumerate(taus):
        N = int(round(T / tau))
        if abs(N * tau - T) > 1e-9 * T:
            raise ValueError(f"T={T} is not a multiple of tau={tau}")
        lim = LimitingScheme(op, sf, tau, backend)

        def block(stream, n):
            x = FieldState(np.broadcast_to(x0, (n, op.J)).copy(), rep)
            for _ in range(N):
                x = lim.step(x, stream)
            return phi(_nodal(op, x.values))

        m, s = _mean_se(run_replicas(block, M, seed, block_size, threads, 1000 * k))
        ref = averaged_reference(op, x0, gbar, tau / refine, N * refine, backend)
        means.append(m)
        ses.append(s)
        refs.append(float(phi(_nodal(op, ref.values))))
    means, ses, refs = np.array(means), np.array(ses), np.array(refs)
    err = np.abs(means - refs)
    fit = _filtered_fit(taus, err, ses, err >= 3.0 * ses,
                        "fewer than 3 errors above 3 standard errors; fit refused")
    return ConsistencyResult(taus, means, ses, refs, fit)
