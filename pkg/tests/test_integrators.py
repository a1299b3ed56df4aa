import csv

import numpy as np
import pytest

from modeuler.diagnostics import batch_means
from modeuler.integrators import (
    SCHEMES,
    SchemeConfig,
    Stepper,
    exact_ou,
    exponential_factors,
    one_step_coefficients,
    run_coupled,
    run_trajectory,
    step_exponential,
    step_modified,
    step_modified_bform,
    step_modified_expform,
    step_standard,
    variance_recursion,
    write_path_csv,
)
from modeuler.modified_equation import auxiliary_two_step_variance
from modeuler.noise import NoiseStream, draw_cylindrical
from modeuler.operators import MODAL, NODAL, FieldState, build_fd, build_spectral, factorize_resolvent, to_modal
from modeuler.problems import ProblemSpec, ou, sine


def modal(v):
    return FieldState(np.asarray(v, dtype=float), MODAL)


def unit(J, j):
    e = np.zeros(J)
    e[j] = 1.0
    return modal(e)


@pytest.fixture
def op4():
    return build_spectral(4)


def tau_for_unit_product(op, j=0):
    return 1.0 / op.lambdas[j]


# pure resolvent examples

def test_modified_pure_resolvent(op4):
    f = factorize_resolvent(op4, tau_for_unit_product(op4))
    z = modal(np.zeros(4))
    out = step_modified(f, ou(), unit(4, 0), z, z).values
    assert out[0] == pytest.approx(0.5)


def test_bform_and_expform_pure_resolvent(op4):
    f = factorize_resolvent(op4, tau_for_unit_product(op4))
    z = modal(np.zeros(4))
    x = modal([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_allclose(step_modified_bform(f, ou(), x, z).values, f.spectral_scalars * x.values)
    np.testing.assert_allclose(step_modified_expform(f, ou(), x, z).values, f.spectral_scalars * x.values,
                               rtol=1e-14)


def test_standard_pure_resolvent(op4):
    f = factorize_resolvent(op4, tau_for_unit_product(op4))
    out = step_standard(f, ou(), unit(4, 0), modal(np.zeros(4))).values
    assert out[0] == pytest.approx(0.5)


def test_spectral_only_steps_reject_fd():
    f = factorize_resolvent(build_fd(4), 0.1)
    x = FieldState(np.zeros(4), NODAL)
    with pytest.raises(ValueError):
        step_modified_bform(f, ou(), x, x)
    with pytest.raises(ValueError):
        step_modified_expform(f, ou(), x, x)
    with pytest.raises(ValueError):
        exponential_factors(build_fd(4), 0.1)


def test_representation_mismatch():
    f = factorize_resolvent(build_fd(4), 0.1)
    m = modal(np.zeros(4))
    with pytest.raises(ValueError):
        step_modified(f, ou(), m, m, m)


# per-mode coefficients

def test_bform_variance_at_unit_product():
    _, _, v = one_step_coefficients("modified_bform", 1.0, [1.0])
    assert v[0] == pytest.approx(3 / 8)


def test_expform_coefficients_at_unit_product():
    m, d, v = one_step_coefficients("modified_expform", 1.0, [1.0])
    assert m[0] == pytest.approx(0.5, rel=1e-14)
    assert d[0] == pytest.approx(0.5, rel=1e-14)
    assert v[0] == pytest.approx(3 / 8, rel=1e-14)


def test_exponential_drift_factor():
    lam = 2.0
    tau = np.log(2) / lam
    _, d, _ = one_step_coefficients("exponential", tau, [lam])
    assert d[0] == pytest.approx(1 / (2 * lam))


def test_exponential_large_step_variance():
    _, _, v = one_step_coefficients("exponential", 1e3, [3.0])
    assert v[0] == pytest.approx(1 / 6)


def test_formulations_agree_on_random_grid(rng):
    tau = 10 ** rng.uniform(-5, 1, 1000)
    lam = 10 ** rng.uniform(-1, 6, 1000)
    ref = one_step_coefficients("modified", tau, lam)
    for scheme in ("modified_bform", "modified_expform"):
        other = one_step_coefficients(scheme, tau, lam)
        for a, b in zip(ref, other):
            np.testing.assert_allclose(b, a, rtol=1e-12, atol=0)


def test_unknown_scheme():
    with pytest.raises(ValueError):
        one_step_coefficients("leapfrog", 0.1, [1.0])
    with pytest.raises(ValueError):
        SchemeConfig(0.1, 3, "leapfrog")


# stationary variances

def test_modified_stationary_variance_example():
    # tau = 0.5, lambda = 2: fixed point of v <- a^2 v + tau (a^2 + a)/2 with a = 1/2
    v = variance_recursion("modified", 0.5, [2.0], 0.0, 200)
    assert v[0] == pytest.approx(0.25, rel=1e-14)


def test_standard_stationary_variance_example():
    lam = 7.0
    v = variance_recursion("standard", 2.0 / lam, [lam], 0.0, 500)
    assert v[0] == pytest.approx(1 / (4 * lam), rel=1e-12)


def test_standard_stationary_matches_nu_tau():
    op = build_spectral(20)
    tau = 0.01
    v = variance_recursion("standard", tau, op.lambdas, 0.0, 20000)
    np.testing.assert_allclose(v, 0.5 / op.lambdas / (1 + tau * op.lambdas / 2), rtol=1e-12)


@pytest.mark.parametrize("tau", [0.5, 0.1, 0.01])
def test_gaussian_invariance_recursion(tau):
    op = build_spectral(256)
    target = 0.5 / op.lambdas
    for N in (1, 7, 100):
        v = variance_recursion("modified", tau, op.lambdas, target, N)
        assert np.max(np.abs(v - target) / target) <= 1e-12


def test_composition_matches_modified_noise():
    op = build_spectral(100)
    for tau in (1e-3, 0.1, 2.0):
        _, _, v = one_step_coefficients("modified", tau, op.lambdas)
        np.testing.assert_allclose(auxiliary_two_step_variance(tau, op.lambdas), v, rtol=1e-12)


# trajectories

def test_zero_steps_returns_initial_state(op4):
    x0 = modal([1.0, -1.0, 0.5, 0.0])
    out = run_trajectory(SchemeConfig(0.1, 0, "modified"), op4, ou(), x0, NoiseStream(0, 0))
    assert np.array_equal(out.values, x0.values)


def test_config_horizon():
    cfg = SchemeConfig.from_horizon(2**-4, 1.0, "standard")
    assert cfg.N == 16 and cfg.T == 1.0
    with pytest.raises(ValueError):
        SchemeConfig.from_horizon(0.3, 1.0)
    with pytest.raises(ValueError):
        SchemeConfig(0.0, 1)


def test_scheme_operator_compatibility():
    fd = build_fd(4)
    x0 = FieldState(np.zeros(4), NODAL)
    for scheme in ("modified_bform", "modified_expform", "exponential", "exact_ou"):
        with pytest.raises(ValueError):
            run_trajectory(SchemeConfig(0.1, 1, scheme), fd, ou(), x0, NoiseStream(0, 0))
    with pytest.raises(ValueError):
        Stepper("exact_ou", build_spectral(4), sine(), 0.1)


def test_nan_guard(op4):
    blowup = ProblemSpec(f=lambda z: np.where(np.abs(z) > 0, np.inf, 0.0) + 1.0, label="bad")
    with pytest.raises(FloatingPointError, match="step"):
        run_trajectory(SchemeConfig(0.1, 5, "modified"), op4, blowup, modal(np.zeros(4)), NoiseStream(0, 0))


def test_exact_ou_stationary_variance():
    op = build_spectral(8)
    x0 = modal(np.zeros((20_000, 8)))
    out = run_trajectory(SchemeConfig(1.0, 5, "exact_ou"), op, ou(), x0, NoiseStream(3, 0)).values
    target = 0.5 / op.lambdas
    var = out.var(axis=0)
    se = target * np.sqrt(2 / out.shape[0])
    assert np.all(np.abs(var - target) < 5 * se)


def test_exponential_step_accepts_stream(op4):
    e = exponential_factors(op4, 0.1)
    x = modal(np.ones(4))
    a = step_exponential(e, sine(), x, NoiseStream(1, 0))
    g = draw_cylindrical(NoiseStream(1, 0), 4, MODAL)
    b = step_exponential(e, sine(), x, g)
    assert np.array_equal(a.values, b.values)
    np.testing.assert_allclose(exact_ou(e, x, g).values, e.decay + e.noise_std * g.values)


def test_one_step_mean_zero_for_odd_drift():
    op = build_spectral(8)
    f = factorize_resolvent(op, 0.1)
    x = run_trajectory(SchemeConfig(0.1, 1, "modified"), op, sine(), modal(np.zeros((100_000, 8))),
                       NoiseStream(4, 0)).values
    se = x.std(axis=0) / np.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0)) < 5 * se)


@pytest.mark.parametrize("scheme", ["modified", "modified_bform", "modified_expform"])
def test_mc_invariance_from_nu(scheme):
    op = build_spectral(8)
    M = 40_000
    g = draw_cylindrical(NoiseStream(5, 0), 8, MODAL, M).values
    x0 = modal(g / np.sqrt(2 * op.lambdas))
    out = run_trajectory(SchemeConfig(0.3, 3, scheme), op, ou(), x0, NoiseStream(5, 1)).values
    target = 0.5 / op.lambdas
    se = target * np.sqrt(2 / M)
    assert np.all(np.abs(out.var(axis=0) - target) < 5 * se)


def test_contractive_mean_norm_bounded():
    op = build_spectral(16)
    f = factorize_resolvent(op, 0.05)
    x = modal(np.full(16, 10.0))
    stream = NoiseStream(2, 0)
    norms = []
    for _ in range(10_000):
        g1 = draw_cylindrical(stream, 16, MODAL)
        g2 = draw_cylindrical(stream, 16, MODAL)
        x = step_modified(f, ou(), x, g1, g2)
        norms.append(np.linalg.norm(x.values))
    norms = np.array(norms)
    stationary_rms = np.sqrt(np.sum(0.5 / op.lambdas))
    assert norms[1000:].mean() < 2 * stationary_rms
    assert norms.max() < np.linalg.norm(np.full(16, 10.0))


def test_fd_and_spectral_trajectories_run(backend):
    for op in (build_fd(15), build_spectral(15)):
        x0 = FieldState(np.zeros(15), op.representation)
        for scheme in ("modified", "standard"):
            out = run_trajectory(SchemeConfig(0.01, 10, scheme), op, sine(), x0, NoiseStream(0, 0),
                                 backend=backend if op.kind == "fd" else None)
            assert np.all(np.isfinite(out.values))


def test_path_recording_and_csv(tmp_path):
    op = build_spectral(7)
    traj = run_trajectory(SchemeConfig(0.1, 4, "modified"), op, sine(), modal(np.zeros(7)), NoiseStream(0, 0),
                          record="path")
    assert traj.path.shape == (5, 7)
    np.testing.assert_allclose(traj.times, [0, 0.1, 0.2, 0.3, 0.4])
    assert np.array_equal(traj.path[-1], traj.final.values)
    assert run_trajectory(SchemeConfig(0.1, 4), op, sine(), modal(np.zeros(7)), NoiseStream(0, 0),
                          record="none") is None
    out = tmp_path / "path.csv"
    write_path_csv(str(out), traj, MODAL, ["seed=0"])
    lines = out.read_text().splitlines()
    assert lines[0] == "# seed=0"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["t"] + [f"xi_{i}" for i in range(1, 8)]
    nodal_last = np.array([float(v) for v in rows[-1][1:]])
    np.testing.assert_allclose(to_modal(FieldState(nodal_last, NODAL)).values, traj.final.values, atol=1e-14)


def test_coupled_runs_share_noise():
    op = build_fd(31)
    x0 = FieldState(np.zeros(31), NODAL)
    tm, ts = run_coupled(op, ou(), x0, 0.01, 20, NoiseStream(8, 0), record=True)
    xm, xs = run_coupled(op, ou(), x0, 0.01, 20, NoiseStream(8, 0))
    assert np.array_equal(tm.final.values, xm.values)
    assert np.array_equal(ts.final.values, xs.values)
    # the shared path makes the two schemes strongly correlated in the first mode
    xm, xs = run_coupled(op, ou(), FieldState(np.zeros((2000, 31)), NODAL), 0.01, 20, NoiseStream(9, 0))
    c = np.corrcoef(to_modal(xm).values[:, 0], to_modal(xs).values[:, 0])[0, 1]
    assert c > 0.95
