"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import time

import numpy as np
import pytest

from modeuler.cli import run
from modeuler.diagnostics import (
    deterministic_weak_error,
    hellinger_diag,
    hellinger_neg_log_affinity,
    mc_weak_error,
    mode_variances,
    sobolev_moment,
    strong_error,
)
from modeuler.integrators import one_step_coefficients, variance_recursion
from modeuler.mcmc import run_chain
from modeuler.modified_equation import modified_spectra_from
from modeuler.noise import NoiseStream
from modeuler.operators import NODAL, FieldState, build_fd, build_spectral, factorize_resolvent, to_modal
from modeuler.problems import ou, sine


def modal_square(nodal_values, j):
    return to_modal(FieldState(nodal_values, NODAL)).values[..., j] ** 2


def report(number, ok, detail, started):
    line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} ({time.time() - started:.1f} s) {detail}"
    print("\n" + line)
    assert ok, line


def test_criterion_01_exact_gaussian_invariance(tmp_path):
    t0 = time.time()
    worst = 0.0
    for tau in (0.5, 0.1, 0.01):
        for J in (16, 64, 256):
            lam = build_spectral(J).lambdas
            nu = 0.5 / lam
            m, _, q = one_step_coefficients("modified", tau, lam)
            worst = max(worst, np.max(np.abs(q / (1 - m * m) - nu) / nu))
            worst = max(worst, np.max(np.abs(variance_recursion("modified", tau, lam, nu, 200) - nu) / nu))
    s = run("invariant", overrides=["J=32", "n_steps=100000", "burn_in=1000"], seed=0,
            out_dir=str(tmp_path))
    ok = worst <= 1e-12 and s["mc_max_z"] <= 5.0
    report(1, ok, f"recursion max rel err {worst:.2e}; MC max |z| {s['mc_max_z']:.2f} over 32 modes", t0)


def test_criterion_02_fd_operator_identity():
    t0 = time.time()
    worst = 0.0
    for J in range(1, 9):
        for tau in (1e-3, 0.07, 1.0):
            op = build_fd(J)
            f = factorize_resolvent(op, tau)
            Lam = op.matrix()
            A = np.linalg.inv(np.eye(J) + tau * Lam)
            B1 = A / np.sqrt(2.0)
            B2 = np.linalg.inv(f.cholesky_L).T / np.sqrt(2.0)
            lhs = tau * (B1 @ B1.T + B2 @ B2.T) @ np.linalg.inv(np.eye(J) - A @ A)
            worst = max(worst, np.max(np.abs(lhs - 0.5 * np.linalg.inv(Lam))))
    report(2, worst <= 1e-10, f"max entrywise error {worst:.2e} over J=1..8", t0)


def test_criterion_03_formulation_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    tau = 10 ** rng.uniform(-4, 1, 1000)
    lam = 10 ** rng.uniform(0, 6, 1000)
    ref = one_step_coefficients("modified", tau, lam)
    worst = 0.0
    for scheme in ("modified_bform", "modified_expform"):
        for a, b in zip(ref, one_step_coefficients(scheme, tau, lam)):
            worst = max(worst, np.max(np.abs(b - a) / np.abs(a)))
    sp = modified_spectra_from(lam, tau)
    lhs = -np.expm1(-tau * sp.lambda_tau) * sp.q_tau / sp.lambda_tau
    drift = np.max(np.abs(lhs - tau / (1 + tau * lam)) * (1 + tau * lam) / tau)
    worst = max(worst, drift)
    report(3, worst <= 1e-12, f"max rel discrepancy {worst:.2e} (drift identity {drift:.2e}) on 1000 pairs", t0)


def test_criterion_04_regularity_dichotomy():
    t0 = time.time()
    op = build_spectral(2**16)
    verdicts = {}
    for scheme in ("exact", "modified", "standard"):
        table = mode_variances(scheme, op, 0.01)
        for alpha in (0.2, 0.3):
            verdicts[scheme, alpha] = sobolev_moment(table, alpha).converges
    ok = (verdicts["exact", 0.2] and verdicts["modified", 0.2]
          and not verdicts["exact", 0.3] and not verdicts["modified", 0.3]
          and verdicts["standard", 0.3])
    detail = ", ".join(f"{s} a={a}: {'conv' if v else 'div'}" for (s, a), v in verdicts.items())
    report(4, ok, detail, t0)


def test_criterion_05_standard_bias_half_order():
    t0 = time.time()
    taus = 2.0 ** -np.arange(4, 13)
    op = build_spectral(2**14)
    fit = deterministic_weak_error(op, taus, None, "standard")
    constant = np.exp(np.mean(np.log(fit.errors) - 0.5 * np.log(taus)))
    target = 1 / (4 * np.sqrt(2))
    mod = deterministic_weak_error(op, taus, None, "modified")
    ok = abs(fit.slope - 0.5) <= 0.05 and abs(constant / target - 1) <= 0.15 and np.all(mod.errors == 0)
    report(5, ok, f"slope {fit.slope:.4f}; constant {constant:.4f} vs {target:.4f}; "
                  f"modified max bias {np.max(mod.errors):.1e}", t0)


def test_criterion_06_hellinger_contrast(tmp_path):
    t0 = time.time()
    tau = 0.1
    Js = [1, 2, 4, 8, 16, 32, 64, 128, 256, 1024, 4096]
    h_mod, h_std, nla = [], [], []
    for J in Js:
        op = build_spectral(J)
        nu = mode_variances("exact", op).variances
        v_std = mode_variances("standard", op, tau).variances
        h_mod.append(hellinger_diag(mode_variances("modified", op, tau).variances, nu))
        h_std.append(hellinger_diag(v_std, nu))
        nla.append(hellinger_neg_log_affinity(v_std, nu))
    above = [J for J, h in zip(Js, h_std) if h >= 0.9]
    J_star = above[0] if above else None
    ok = (all(h == 0.0 for h in h_mod) and J_star is not None
          and all(h >= 0.9 for J, h in zip(Js, h_std) if J >= J_star)
          and np.all(np.diff(nla) > 0) and np.all(np.diff(h_std) >= 0))
    report(6, ok, f"H_modified = 0 for all J; J* = {J_star}; H_standard(J*) = {h_std[Js.index(J_star)]:.4f}", t0)


@pytest.mark.slow
def test_criterion_07_strong_orders():
    t0 = time.time()
    taus = 2.0 ** -np.arange(3, 9)
    res = strong_error(build_spectral(64), sine(), taus, 0.5, 2000, seed=0, schemes=("exponential", "standard"))
    e, s = res.fits["exponential"], res.fits["standard"]
    ok_e = e.ok and 0.4 <= e.slope <= 0.6
    ok_s = s.ok and 0.15 <= s.slope <= 0.35
    report(7, ok_e and ok_s, f"exponential slope {e.slope:.3f} ({'in' if ok_e else 'outside'} [0.4, 0.6]); "
                             f"standard slope {s.slope:.3f} ({'in' if ok_s else 'outside'} [0.15, 0.35])", t0)


@pytest.mark.slow
def test_criterion_08_mc_weak_order():
    t0 = time.time()
    taus = 2.0 ** -np.arange(3, 9)
    res = mc_weak_error(build_spectral(64), sine(), taus, 0.5, 100_000, seed=0)
    fit = res.fits["modified"]
    all_used = bool(np.all(fit.errors >= 3 * fit.stderr))
    ok = fit.ok and all_used and 0.35 <= fit.slope <= 0.75
    report(8, ok, f"slope {fit.slope:.3f} (band [0.35, 0.75]); all points >= 3 SE: {all_used}; "
                  f"min error/SE {np.min(fit.errors / fit.stderr):.1f}", t0)


@pytest.mark.slow
def test_criterion_09_asymptotic_preserving(tmp_path):
    t0 = time.time()
    s = run("ap", seed=0, out_dir=str(tmp_path))
    ok = s["monotone"] and s["reaches_floor"] and s["consistency_slope"] >= 0.8 and s["standard_gap_z"] > 5
    report(9, ok, f"gaps monotone {s['monotone']}, floor {s['reaches_floor']}; consistency slope "
                  f"{s['consistency_slope']:.3f}; standard-noise gap {s['standard_gap_z']:.1f} SE", t0)


@pytest.mark.slow
def test_criterion_10_mcmc_targets_gibbs(tmp_path):
    t0 = time.time()
    op = build_spectral(32)
    nu = 0.5 / op.lambdas
    obs = {f"c{j}": (lambda v, j=j: modal_square(v, j)) for j in range(32)}
    free = run_chain(factorize_resolvent(op, 0.1), ou(), 3000, 100, NoiseStream(0, 0),
                     observables=obs, n_chains=100)
    z_free = max(abs(free.means[f"c{j}"] - nu[j]) / free.stderr[f"c{j}"] for j in range(32))
    s = run("mcmc", seed=0, out_dir=str(tmp_path))
    ok = free.acceptance_rate == 1.0 and z_free <= 5.0 and s["l2_sq_z"] <= 3.0
    report(10, ok, f"V=0 acceptance {free.acceptance_rate}; V=0 mode variance max |z| {z_free:.2f}; "
                   f"beta=0.5 l2 MCMC {s['l2_sq_mcmc']:.5f} vs SDE {s['l2_sq_sde']:.5f} "
                   f"({s['l2_sq_z']:.2f} combined SE)", t0)


@pytest.mark.slow
def test_criterion_11_roughness_reproduction(tmp_path):
    t0 = time.time()
    args = dict(overrides=["J=255", "tau=2^-8", "T=1", "n_seeds=100"], seed=1)
    s = run("simulate", out_dir=str(tmp_path / "a"), **args)
    run("simulate", out_dir=str(tmp_path / "b"), **args)
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
               for n in ("qv.csv", "qv_seeds.csv", "modified_path.csv", "standard_path.csv", "summary.json"))
    ok = abs(s["qv_modified"] - 0.5) <= 0.1 and s["standard_below_modified"] >= 95 and same
    report(11, ok, f"QV modified {s['qv_modified']:.4f}, standard {s['qv_standard']:.4f}; "
                   f"standard < modified in {s['standard_below_modified']}/100 seeds; byte-identical rerun {same}",
           t0)
