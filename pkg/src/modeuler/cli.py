"""Command-line experiment driver.

Usage::

    modeuler SUBCOMMAND [--config PATH] [--seed U64] [--threads N] [--out DIR] [key=value ...]

Every subcommand writes CSV tables (with ``#`` metadata comments) and a
JSON summary into ``--out``.  Identical configuration and seed give
byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
from typing import Dict, List, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, load_config, make_coefficient
from .diagnostics import (
    batch_means,
    deterministic_weak_error,
    feldman_hajek_indicator,
    hellinger_diag,
    hellinger_neg_log_affinity,
    mc_weak_error,
    mode_variances,
    qv_mode_sum,
    quadratic_variation,
    sobolev_moment,
    strong_error,
)
from .integrators import run_coupled, variance_recursion, write_path_csv
from .mcmc import run_chain, run_sde_average
from .noise import NoiseStream, default_threads, draw_cylindrical
from .operators import NODAL, FieldState, build_fd, build_spectral, factorize_resolvent, grid, sample_invariant, to_nodal
from .problems import cos_coupling, parse_problem
from .slowfast import ap_epsilon_sweep, limiting_consistency

DEFAULTS: Dict[str, Dict[str, str]] = {
    "simulate": {"operator": "fd", "J": "255", "tau": "2^-8", "T": "1", "problem": "ou", "n_seeds": "1"},
    "weak-order": {"operator": "spectral", "J": "64", "problem": "sine", "T": "0.5",
                   "taus": "2^-3,2^-4,2^-5,2^-6,2^-7,2^-8", "M": "10000", "schemes": "modified"},
    "strong-order": {"operator": "spectral", "J": "64", "problem": "sine", "T": "0.5",
                     "taus": "2^-3,2^-4,2^-5,2^-6,2^-7,2^-8", "M": "2000",
                     "schemes": "exponential,standard"},
    "invariant": {"operator": "spectral", "J": "32", "tau": "0.1", "n_steps": "100000", "burn_in": "1000"},
    "regularity": {"J": "65536", "tau": "0.01", "alphas": "0.2,0.3"},
    "gaussian-diag": {"tau": "0.1", "J_list": "1,2,4,8,16,32,64,128,256,1024,4096", "N": "10"},
    "ap": {"operator": "fd", "J": "32", "tau": "0.01", "n_steps": "4", "epsilons": "1e-1,1e-2,1e-3,1e-4",
           "M": "20000", "x0_amplitude": "0", "y0_amplitude": "5", "T": "0.5",
           "taus": "2^-2,2^-3,2^-4,2^-5,2^-6"},
    "mcmc": {"operator": "fd", "J": "32", "problem": "gradient_cos(0.5)", "tau": "0.1", "n_steps": "1000",
             "burn_in": "100", "n_chains": "1000", "sde_tau": "0.01"},
}

COMMANDS = tuple(DEFAULTS)


def version_string() -> str:
    """``v<version>`` plus the short commit hash when run from a git checkout."""
    try:
        here = os.path.dirname(os.path.abspath(__file__))
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


class Output:
    """Writes CSV/JSON files with a shared metadata header."""

    def __init__(self, out_dir: str, command: str, cfg: RunConfig, seed: int):
        os.makedirs(out_dir, exist_ok=True)
        self.dir = out_dir
        self.meta = [f"modeuler {version_string()}", f"command={command}", f"seed={seed}"]
        self.meta += [f"config {line}" for line in cfg.echo()]
        self.files: List[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def csv(self, name: str, header: Sequence[str], rows) -> str:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            for line in self.meta:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
        self.files.append(p)
        return p

    def json(self, name: str, summary: dict) -> str:
        p = self.path(name)
        clean = {k: _jsonable(v) for k, v in summary.items()}
        clean["version"] = version_string()
        with open(p, "w") as fh:
            json.dump(clean, fh, indent=1, sort_keys=True)
            fh.write("\n")
        self.files.append(p)
        return p


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if np.isfinite(f) else None
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    return v


def build_operator(cfg: RunConfig):
    kind = cfg.get("operator", "spectral")
    J = cfg.get("J")
    if kind == "spectral":
        if cfg.get("a_coeff") not in (None, "1", "1.0"):
            raise ValueError("a variable coefficient needs operator=fd")
        return build_spectral(J)
    if kind == "fd":
        return build_fd(J, make_coefficient(cfg.get("a_coeff")))
    raise ValueError(f"unknown operator {kind!r}")


def _seed(cfg):
    return int(cfg.get("seed", 0))


# Subcommands ------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Output, threads: int) -> dict:
    """Modified and standard schemes on one shared Wiener path, with their roughness."""
    op = build_operator(cfg)
    p = parse_problem(cfg.get("problem"))
    tau, N = cfg.resolve_horizon()
    seed = _seed(cfg)
    n_seeds = cfg.get("n_seeds", 1)
    x0 = FieldState(np.zeros(op.J), op.representation)

    def nodal(traj_values):
        if op.representation == NODAL:
            return traj_values
        return to_nodal(FieldState(traj_values, op.representation)).values

    tm, ts = run_coupled(op, p, x0, tau, N, NoiseStream(seed, 0), record=True)
    write_path_csv(out.path("modified_path.csv"), tm, op.representation, out.meta)
    write_path_csv(out.path("standard_path.csv"), ts, op.representation, out.meta)
    out.files += [out.path("modified_path.csv"), out.path("standard_path.csv")]
    qv_m = quadratic_variation(FieldState(nodal(tm.path), NODAL))
    qv_s = quadratic_variation(FieldState(nodal(ts.path), NODAL))
    out.csv("qv.csv", ["t", "qv_modified", "qv_standard"], zip(tm.times, qv_m, qv_s))

    finals = []
    for k in range(n_seeds):
        xm, xs = run_coupled(op, p, x0, tau, N, NoiseStream(seed + k, 0)) if k else (tm.final, ts.final)
        finals.append((seed + k, float(quadratic_variation(FieldState(nodal(xm.values), NODAL))),
                       float(quadratic_variation(FieldState(nodal(xs.values), NODAL)))))
    if n_seeds > 1:
        out.csv("qv_seeds.csv", ["seed", "qv_modified", "qv_standard"], finals)
    qm = np.array([f[1] for f in finals])
    qs = np.array([f[2] for f in finals])
    summary = {
        "command": "simulate", "seed": seed, "J": op.J, "tau": tau, "N": N, "T": tau * N,
        "qv_modified": float(qm[0]), "qv_standard": float(qs[0]),
        "qv_modified_mean": float(qm.mean()), "standard_below_modified": int(np.sum(qs < qm)),
        "n_seeds": n_seeds,
        "qv_modified_within_band": bool(abs(qm[0] - 0.5) <= 0.1),
        "pass": bool(abs(qm[0] - 0.5) <= 0.1 and np.sum(qs < qm) >= 0.95 * n_seeds),
    }
    out.json("summary.json", summary)
    return summary


def _rate_rows(fits, stat_name):
    rows = []
    for s, fit in fits.items():
        se = fit.stderr if fit.stderr is not None else np.full(fit.taus.size, np.nan)
        used = fit.used if fit.used is not None else np.ones(fit.taus.size, bool)
        for t, e, sd, u in zip(fit.taus, fit.errors, se, used):
            rows.append((s, t, e, sd, bool(u)))
    return rows


def cmd_weak_order(cfg: RunConfig, out: Output, threads: int) -> dict:
    op = build_operator(cfg)
    p = parse_problem(cfg.get("problem"))
    taus, T = cfg.get("taus"), cfg.get("T")
    schemes = cfg.get("schemes")
    if p.is_zero:
        fits = {s: deterministic_weak_error(op, taus, T, s) for s in schemes}
    else:
        res = mc_weak_error(op, p, taus, T, cfg.get("M"), _seed(cfg), schemes=schemes,
                            tau_ref=cfg.get("tau_ref"), threads=threads)
        fits = res.fits
    out.csv("weak_order.csv", ["scheme", "tau", "error", "stderr", "used"], _rate_rows(fits, "error"))
    summary = {"command": "weak-order", "seed": _seed(cfg), "M": cfg.get("M")}
    for s, fit in fits.items():
        summary[f"{s}_slope"] = fit.slope
        summary[f"{s}_fit_ok"] = fit.ok
        summary[f"{s}_in_band"] = bool(fit.ok and 0.35 <= fit.slope <= 0.75)
        if fit.note:
            summary[f"{s}_note"] = fit.note
    out.json("summary.json", summary)
    return summary


def cmd_strong_order(cfg: RunConfig, out: Output, threads: int) -> dict:
    op = build_operator(cfg)
    p = parse_problem(cfg.get("problem"))
    res = strong_error(op, p, cfg.get("taus"), cfg.get("T"), cfg.get("M"), _seed(cfg),
                       schemes=cfg.get("schemes"), tau_ref=cfg.get("tau_ref"), threads=threads)
    out.csv("strong_order.csv", ["scheme", "tau", "error", "stderr", "used"], _rate_rows(res.fits, "error"))
    summary = {"command": "strong-order", "seed": _seed(cfg), "M": cfg.get("M")}
    bands = {"exponential": (0.4, 0.6), "standard": (0.15, 0.35)}
    for s, fit in res.fits.items():
        summary[f"{s}_slope"] = fit.slope
        if s in bands:
            lo, hi = bands[s]
            summary[f"{s}_in_band"] = bool(fit.ok and lo <= fit.slope <= hi)
    out.json("summary.json", summary)
    return summary


def cmd_invariant(cfg: RunConfig, out: Output, threads: int) -> dict:
    """Stationary variances of the modified scheme: recursion and Monte Carlo."""
    op = build_operator(cfg)
    if op.kind != "spectral":
        raise ValueError("invariant expects operator=spectral")
    tau = cfg.get("tau")
    target = 1.0 / (2.0 * op.lambdas)
    rec = variance_recursion("modified", tau, op.lambdas, target, 50)
    rec_err = float(np.max(np.abs(rec - target) / target))
    n_steps, burn = cfg.get("n_steps"), cfg.get("burn_in")
    f = factorize_resolvent(op, tau)
    stream = NoiseStream(_seed(cfg), 0)
    x = sample_invariant(op, draw_cylindrical(stream, op.J, op.representation))
    from .integrators import step_modified
    from .problems import ou
    p = ou()
    samples = np.empty((n_steps - burn, op.J))
    for n in range(n_steps):
        g1 = draw_cylindrical(stream, op.J, op.representation)
        g2 = draw_cylindrical(stream, op.J, op.representation)
        x = step_modified(f, p, x, g1, g2)
        if n >= burn:
            samples[n - burn] = x.values
    mc, se = zip(*(batch_means(samples[:, j] ** 2) for j in range(op.J)))
    mc, se = np.array(mc), np.array(se)
    z = np.abs(mc - target) / se
    rows = zip(range(1, op.J + 1), op.lambdas, target, rec, mc, se, z)
    out.csv("invariant.csv", ["mode", "lambda", "target", "recursion", "mc_variance", "mc_stderr", "z"], rows)
    summary = {"command": "invariant", "seed": _seed(cfg), "tau": tau, "J": op.J,
               "recursion_max_rel_error": rec_err, "mc_max_z": float(z.max()),
               "pass": bool(rec_err <= 1e-12 and z.max() <= 5.0)}
    out.json("summary.json", summary)
    return summary


def cmd_regularity(cfg: RunConfig, out: Output, threads: int) -> dict:
    op = build_spectral(cfg.get("J"))
    tau = cfg.get("tau")
    rows, summary = [], {"command": "regularity", "tau": tau, "J": op.J}
    for scheme in ("exact", "modified", "standard"):
        table = mode_variances(scheme, op, tau, None)
        for alpha in cfg.get("alphas"):
            m = sobolev_moment(table, alpha)
            rows.append((scheme, alpha, m.value, m.ratios[-1], m.converges, m.analytic_converges))
            summary[f"{scheme}_alpha{alpha:g}_converges"] = m.converges
    out.csv("regularity.csv", ["scheme", "alpha", "partial_sum", "doubling_ratio", "converges",
                               "analytic_converges"], rows)
    out.json("summary.json", summary)
    return summary


def cmd_gaussian_diag(cfg: RunConfig, out: Output, threads: int) -> dict:
    tau = cfg.get("tau")
    rows, J_star = [], None
    for J in cfg.get("J_list"):
        op = build_spectral(J)
        nu = mode_variances("exact", op).variances
        h_mod = hellinger_diag(mode_variances("modified", op, tau).variances, nu)
        v_std = mode_variances("standard", op, tau).variances
        h_std = hellinger_diag(v_std, nu)
        nla = hellinger_neg_log_affinity(v_std, nu)
        fh = feldman_hajek_indicator(op, tau, cfg.get("N"))
        rows.append((J, h_mod, h_std, nla, fh.modified_sum, fh.exact_sum, fh.modified_tail_bound, fh.exact_tail_bound))
        if J_star is None and h_std >= 0.9:
            J_star = J
    out.csv("gaussian_diag.csv", ["J", "hellinger_modified", "hellinger_standard",
                                  "standard_neg_log_affinity", "fh_modified_sum",
                                  "fh_exact_sum", "fh_modified_tail", "fh_exact_tail"], rows)
    nla = [r[3] for r in rows]
    summary = {"command": "gaussian-diag", "tau": tau, "J_star": J_star,
               "modified_zero": all(r[1] == 0.0 for r in rows),
               "standard_monotone": bool(np.all(np.diff(nla) > 0)),
               "pass": bool(J_star is not None and all(r[1] == 0.0 for r in rows) and np.all(np.diff(nla) > 0))}
    out.json("summary.json", summary)
    return summary


def cmd_ap(cfg: RunConfig, out: Output, threads: int) -> dict:
    op = build_operator(cfg)
    sf = cos_coupling()
    xi = grid(op.J)
    x0 = cfg.get("x0_amplitude") * np.sqrt(2.0) * np.sin(np.pi * xi)
    y0 = cfg.get("y0_amplitude") * np.sqrt(2.0) * np.sin(np.pi * xi)
    if op.representation != NODAL:
        from .operators import to_modal
        x0 = to_modal(FieldState(x0, NODAL)).values
        y0 = to_modal(FieldState(y0, NODAL)).values
    seed, M = _seed(cfg), cfg.get("M")
    sweep = ap_epsilon_sweep(op, sf, x0, y0, cfg.get("tau"), cfg.get("n_steps"), cfg.get("epsilons"), M,
                             seed, threads=threads)
    out.csv("ap_sweep.csv", ["epsilon", "phi_mean", "stderr", "gap", "gap_stderr"],
            zip(sweep.epsilons, sweep.ap_means, sweep.ap_se, sweep.gaps, sweep.gap_se))
    cons = limiting_consistency(op, sf, x0, cfg.get("T"), cfg.get("taus"), M, seed + 1, threads=threads)
    out.csv("ap_consistency.csv", ["tau", "phi_mean", "stderr", "reference", "error"],
            zip(cons.taus, cons.means, cons.se, cons.references, cons.errors))
    std_z = sweep.standard_gap / sweep.standard_gap_se
    summary = {"command": "ap", "seed": seed, "limit_mean": sweep.limit_mean, "limit_stderr": sweep.limit_se,
               "monotone": sweep.monotone_within(2.0), "reaches_floor": sweep.reaches_floor(3.0),
               "consistency_slope": cons.fit.slope, "standard_gap_z": std_z,
               "pass": bool(sweep.monotone_within(2.0) and sweep.reaches_floor(3.0)
                            and cons.fit.ok and cons.fit.slope >= 0.8 and std_z > 5.0)}
    out.json("summary.json", summary)
    return summary


def cmd_mcmc(cfg: RunConfig, out: Output, threads: int) -> dict:
    op = build_operator(cfg)
    p = parse_problem(cfg.get("problem"))
    seed = _seed(cfg)
    n_steps, burn, chains = cfg.get("n_steps"), cfg.get("burn_in"), cfg.get("n_chains")
    f = factorize_resolvent(op, cfg.get("tau"))
    chain = run_chain(f, p, n_steps, burn, NoiseStream(seed, 0), n_chains=chains)
    # same number of steps for both methods; the SDE's smaller step keeps its bias below the noise
    sde = run_sde_average(factorize_resolvent(op, cfg.get("sde_tau")), p, n_steps, burn, NoiseStream(seed, 1),
                          n_chains=chains)
    rows = []
    for k in chain.means:
        comb = float(np.hypot(chain.stderr[k], sde.stderr[k]))
        rows.append((k, chain.means[k], chain.stderr[k], sde.means[k], sde.stderr[k],
                     abs(chain.means[k] - sde.means[k]) / comb))
    out.csv("mcmc.csv", ["observable", "mcmc_mean", "mcmc_stderr", "sde_mean", "sde_stderr", "z"], rows)
    z_l2 = [r[5] for r in rows if r[0] == "l2_sq"][0]
    summary = {"command": "mcmc", "seed": seed, "acceptance_rate": chain.acceptance_rate,
               "l2_sq_mcmc": chain.means["l2_sq"], "l2_sq_sde": sde.means["l2_sq"], "l2_sq_z": z_l2,
               "pass": bool(z_l2 <= 3.0)}
    out.json("summary.json", summary)
    return summary


HANDLERS = {
    "simulate": cmd_simulate,
    "weak-order": cmd_weak_order,
    "strong-order": cmd_strong_order,
    "invariant": cmd_invariant,
    "regularity": cmd_regularity,
    "gaussian-diag": cmd_gaussian_diag,
    "ap": cmd_ap,
    "mcmc": cmd_mcmc,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modeuler", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"modeuler {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=(HANDLERS[name].__doc__ or name).strip().split("\n")[0])
        sp.add_argument("--config", metavar="PATH", help="key=value configuration file")
        sp.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit, default 0)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        sp.add_argument("--out", metavar="DIR", default=None, help="output directory")
        sp.add_argument("overrides", nargs="*", metavar="KEY=VALUE", help="configuration overrides")
    return parser


def make_config(command: str, config_path=None, overrides=(), seed=None) -> RunConfig:
    cfg = RunConfig()
    for k, v in DEFAULTS[command].items():
        cfg.set(k, v, "default")
    file_cfg = load_config(config_path, overrides)
    for k, raw in file_cfg.sources.items():
        cfg.set(k, raw)
    if seed is not None:
        cfg.set("seed", str(seed))
    if cfg.get("seed") is None:
        cfg.set("seed", "0")
    if not 0 <= cfg.get("seed") < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return cfg


def run(command: str, config_path=None, overrides=(), seed=None, threads=None, out_dir=None) -> dict:
    cfg = make_config(command, config_path, overrides, seed)
    threads = threads or cfg.get("threads") or default_threads()
    out_dir = out_dir or cfg.get("out") or os.path.join("runs", command)
    cfg.values.pop("threads", None)
    cfg.sources.pop("threads", None)
    cfg.values.pop("out", None)
    cfg.sources.pop("out", None)
    out = Output(out_dir, command, cfg, cfg.get("seed"))
    return HANDLERS[command](cfg, out, threads)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = run(args.command, args.config, args.overrides, args.seed, args.threads, args.out)
    except (ValueError, KeyError, OSError) as exc:
        print(f"modeuler {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({k: _jsonable(v) for k, v in summary.items()}, sort_keys=True))
    return 0
