import numpy as np
import pytest
import scipy.stats

from modeuler.noise import NoiseStream, draw_coupled_pair, draw_cylindrical, run_replicas
from modeuler.operators import MODAL, NODAL


def test_replay_is_bit_identical():
    a = draw_cylindrical(NoiseStream(42, 3), 16, MODAL, 10).values
    b = draw_cylindrical(NoiseStream(42, 3), 16, MODAL, 10).values
    assert np.array_equal(a, b)


def test_replicas_differ_and_are_uncorrelated():
    a = NoiseStream(42, 0).normal(200_000)
    b = NoiseStream(42, 1).normal(200_000)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 5 / np.sqrt(a.size)


def test_counter_tracks_draws():
    s = NoiseStream(1, 0)
    draw_cylindrical(s, 8, MODAL, 5)
    s.uniform(3)
    assert s.counter == 43


@pytest.mark.parametrize("seed,replica", [(-1, 0), (2**64, 0), (0, -2)])
def test_bad_identifiers(seed, replica):
    with pytest.raises(ValueError):
        NoiseStream(seed, replica)


def test_modal_moments():
    g = draw_cylindrical(NoiseStream(0, 0), 2, MODAL, 1_000_000).values
    assert abs(g[:, 0].mean()) < 5e-3
    assert abs(g[:, 0].var() - 1.0) < 0.01


def test_nodal_variance_scales_with_inverse_mesh():
    g = draw_cylindrical(NoiseStream(0, 1), 3, NODAL, 1_000_000).values  # h = 1/4
    assert abs(g[:, 0].var() - 4.0) < 0.08


def test_ks_and_cross_covariance():
    J, M = 6, 100_000
    g = draw_cylindrical(NoiseStream(5, 0), J, MODAL, M).values
    for j in range(J):
        assert scipy.stats.kstest(g[:, j], "norm").pvalue > 1e-3
    cov = g.T @ g / M
    off = cov[~np.eye(J, dtype=bool)]
    assert np.all(np.abs(off) < 5 / np.sqrt(M))


def test_coupled_pair_statistics():
    g1, g2, g = draw_coupled_pair(NoiseStream(9, 0), 1, MODAL, 1_000_000)
    a, c = g1.values[:, 0], g.values[:, 0]
    assert abs(c.var() - 1.0) < 0.01
    assert abs(np.corrcoef(a, c)[0, 1] - 1 / np.sqrt(2)) < 0.01
    np.testing.assert_allclose(g1.values + g2.values, np.sqrt(2) * g.values, atol=1e-14)


def test_coupled_pair_replay():
    t1 = draw_coupled_pair(NoiseStream(3, 2), 5, NODAL)
    t2 = draw_coupled_pair(NoiseStream(3, 2), 5, NODAL)
    for a, b in zip(t1, t2):
        assert np.array_equal(a.values, b.values)


def test_run_replicas_independent_of_threads():
    def fn(stream, n):
        return stream.normal((n, 3)).sum(axis=1)

    one = run_replicas(fn, 1234, master_seed=11, block_size=100, threads=1)
    many = run_replicas(fn, 1234, master_seed=11, block_size=100, threads=4)
    assert one.shape == (1234,)
    assert np.array_equal(one, many)


def test_run_replicas_rejects_empty():
    with pytest.raises(ValueError):
        run_replicas(lambda s, n: np.zeros(n), 0)
