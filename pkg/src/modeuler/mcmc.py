"""Metropolis-Hastings sampler for mu_star ~ exp(-2V) d nu.

The proposal is one modified Euler step of the Ornstein-Uhlenbeck
dynamics (no drift), which leaves nu invariant, so the acceptance ratio
only involves the potential: a(x, x') = min(1, exp(2(V(x) - V(x')))).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import scipy.stats

from .diagnostics import batch_means, quadratic_variation
from .integrators import step_modified
from .noise import NoiseStream, draw_cylindrical
from .operators import (
    NODAL,
    FieldState,
    ResolventFactors,
    apply_A_tau,
    sample_modified_noise,
    to_nodal,
)
from .problems import ProblemSpec, evaluate_V, inner_h


def propose(f: ResolventFactors, x: FieldState, g1: FieldState, g2: FieldState) -> FieldState:
    """A x + sqrt(tau)(B1 g1 + B2 g2)."""
    return apply_A_tau(f, x) + sample_modified_noise(f, g1, g2)


def acceptance_prob(V_x, V_xhat):
    """min(1, exp(2 (V(x) - V(x_hat)))), elementwise."""
    V_x = np.asarray(V_x, dtype=np.float64)
    V_xhat = np.asarray(V_xhat, dtype=np.float64)
    if np.any(np.isnan(V_x)) or np.any(np.isnan(V_xhat)):
        raise ValueError("potential values must not be NaN")
    return np.exp(np.minimum(0.0, 2.0 * (V_x - V_xhat)))


def _nodal_values(x: FieldState) -> np.ndarray:
    return x.values if x.representation == NODAL else to_nodal(x).values


def obs_l2_sq(nodal: np.ndarray) -> np.ndarray:
    return inner_h(nodal, nodal)


def obs_mean_cos(nodal: np.ndarray) -> np.ndarray:
    return inner_h(np.cos(nodal), np.ones_like(nodal))


def obs_qv(nodal: np.ndarray) -> np.ndarray:
    return quadratic_variation(FieldState(nodal, NODAL))


DEFAULT_OBSERVABLES: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "l2_sq": obs_l2_sq,
    "mean_cos": obs_mean_cos,
    "qv": obs_qv,
}


@dataclass
class ChainState:
    current: FieldState
    V_current: np.ndarray
    accept_count: np.ndarray
    step_count: int = 0


@dataclass
class ChainStats:
    acceptance_rate: float
    means: Dict[str, float]
    stderr: Dict[str, float]
    n_chains: int
    n_steps: int
    burn_in: int
    trace: Optional[Dict[str, np.ndarray]] = field(default=None, repr=False)
    final: Optional[ChainState] = field(default=None, repr=False)


def _potential(p: ProblemSpec, x: FieldState) -> np.ndarray:
    return np.asarray(evaluate_V(p, FieldState(_nodal_values(x), NODAL)), dtype=np.float64)


def run_chain(f: ResolventFactors, p: ProblemSpec, n_steps: int, burn_in: int, stream: NoiseStream,
              observables: Optional[Dict[str, Callable]] = None, n_chains: int = 1,
              x0: Optional[np.ndarray] = None, n_batches: int = 50, keep_trace: bool = False) -> ChainStats:
    """Run ``n_chains`` independent chains in lockstep.

    Observables are evaluated on grid values after burn-in at every step;
    standard errors are batch means pooled over chains.  The cached
    potential is refreshed only on acceptance.
    """
    if not p.has_potential:
        raise ValueError("the target needs a potential")
    if not 0 <= burn_in < n_steps:
        raise ValueError("burn_in must satisfy 0 <= burn_in < n_steps")
    observables = DEFAULT_OBSERVABLES if observables is None else observables
    J, rep = f.op.J, f.representation
    x = FieldState(np.zeros((n_chains, J)) if x0 is None else np.broadcast_to(x0, (n_chains, J)).copy(), rep)
    state = ChainState(x, _potential(p, x), np.zeros(n_chains, dtype=np.int64))
    kept = n_steps - burn_in
    records = {k: np.empty((kept, n_chains)) for k in observables}
    accepted_after_burn = 0
    for n in range(n_steps):
        g1 = draw_cylindrical(stream, J, rep, n_chains)
        g2 = draw_cylindrical(stream, J, rep, n_chains)
        u = stream.uniform(n_chains)
        prop = propose(f, state.current, g1, g2)
        V_prop = _potential(p, prop)
        accept = u < acceptance_prob(state.V_current, V_prop)
        if accept.any():
            vals = np.where(accept[:, None], prop.values, state.current.values)
            state.current = state.current.like(vals)
            state.V_current = np.where(accept, V_prop, state.V_current)
        state.accept_count += accept
        state.step_count += 1
        if n >= burn_in:
            accepted_after_burn += int(accept.sum())
            nodal = _nodal_values(state.current)
            for k, fn in observables.items():
                records[k][n - burn_in] = fn(nodal)
    means, ses = {}, {}
    for k, series in records.items():
        means[k], ses[k] = batch_means(series, n_batches)
    return ChainStats(
        acceptance_rate=accepted_after_burn / (kept * n_chains),
        means=means,
        stderr=ses,
        n_chains=n_chains,
        n_steps=n_steps,
        burn_in=burn_in,
        trace=records if keep_trace else None,
        final=state,
    )


def run_sde_average(f: ResolventFactors, p: ProblemSpec, n_steps: int, burn_in: int, stream: NoiseStream,
                    observables: Optional[Dict[str, Callable]] = None, n_chains: int = 1,
                    x0: Optional[np.ndarray] = None, n_batches: int = 50) -> ChainStats:
    """Long-run averages of the drifted modified Euler scheme (same output shape as run_chain)."""
    if not 0 <= burn_in < n_steps:
        raise ValueError("burn_in must satisfy 0 <= burn_in < n_steps")
    observables = DEFAULT_OBSERVABLES if observables is None else observables
    J, rep = f.op.J, f.representation
    x = FieldState(np.zeros((n_chains, J)) if x0 is None else np.broadcast_to(x0, (n_chains, J)).copy(), rep)
    kept = n_steps - burn_in
    records = {k: np.empty((kept, n_chains)) for k in observables}
    for n in range(n_steps):
        g1 = draw_cylindrical(stream, J, rep, n_chains)
        g2 = draw_cylindrical(stream, J, rep, n_chains)
        x = step_modified(f, p, x, g1, g2)
        if n >= burn_in:
            nodal = _nodal_values(x)
            for k, fn in observables.items():
                records[k][n - burn_in] = fn(nodal)
    means, ses = {}, {}
    for k, series in records.items():
        means[k], ses[k] = batch_means(series, n_batches)
    return ChainStats(1.0, means, ses, n_chains, n_steps, burn_in)


def flow_symmetry_test(bins: np.ndarray, n_bins: int):
    """Symmetry test of the transition counts between consecutive bin labels.

    Under reversibility the counts i->k and k->i have equal expectations;
    the statistic sum (C_ik - C_ki)^2 / (C_ik + C_ki) over pairs with data
    is compared with a chi-square law.  ``bins`` is a sequence of labels
    or a (steps, chains) array whose columns are independent chains.
    Returns (statistic, dof, p-value).
    """
    bins = np.asarray(bins)
    if bins.ndim == 1:
        bins = bins[:, None]
    counts = np.zeros((n_bins, n_bins), dtype=np.int64)
    np.add.at(counts, (bins[:-1].ravel(), bins[1:].ravel()), 1)
    iu = np.triu_indices(n_bins, 1)
    up, lo = counts[iu], counts.T[iu]
    tot = up + lo
    mask = tot > 0
    stat = float(np.sum((up[mask] - lo[mask]) ** 2 / tot[mask]))
    dof = int(mask.sum())
    return stat, dof, float(scipy.stats.chi2.sf(stat, dof)) if dof else 1.0
