"""Reproducible cylindrical Gaussian noise.

Streams are built on numpy's counter-based Philox generator.  A stream is
identified by ``(master_seed, replica_id)``; the pair is hashed into the
Philox key by :class:`numpy.random.SeedSequence` with ``spawn_key=(replica_id,)``,
so distinct replicas get independent keys and the same pair always replays
the same draws.

Monte Carlo work is split into fixed-size replica blocks, each owning its
own stream.  Results therefore do not depend on the thread count or on the
order in which blocks finish.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from .operators import MODAL, NODAL, FieldState

DEFAULT_BLOCK = 500


class NoiseStream:
    """Single-owner Gaussian source for one replica (or replica block)."""

    def __init__(self, master_seed: int = 0, replica_id: int = 0):
        if master_seed < 0 or master_seed >= 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if replica_id < 0:
            raise ValueError("replica_id must be non-negative")
        self.master_seed = int(master_seed)
        self.replica_id = int(replica_id)
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.replica_id,))
        self._gen = np.random.Generator(np.random.Philox(seq))
        self.counter = 0

    def __repr__(self):
        return (
            f"NoiseStream(master_seed={self.master_seed}, "
            f"replica_id={self.replica_id}, counter={self.counter})"
        )

    def normal(self, shape) -> np.ndarray:
        out = self._gen.standard_normal(shape)
        self.counter += out.size
        return out

    def uniform(self, shape) -> np.ndarray:
        out = self._gen.random(shape)
        self.counter += out.size
        return out

    def spawn(self, replica_id: int) -> "NoiseStream":
        """Sibling stream sharing the master seed."""
        return NoiseStream(self.master_seed, replica_id)


def _shape(J: int, size) -> tuple:
    if size is None:
        return (J,)
    if np.isscalar(size):
        return (int(size), J)
    return tuple(size) + (J,)


def draw_cylindrical(stream: NoiseStream, J: int, representation: str = MODAL, size=None) -> FieldState:
    """Cylindrical Gaussian in the given representation.

    Modal coordinates are iid N(0, 1).  Nodal coordinates have variance
    1/h = J + 1 so that h * E[g g^T] = I in the discrete L2 inner product.
    ``size`` prepends batch axes.
    """
    if J < 1:
        raise ValueError("J must be positive")
    g = stream.normal(_shape(J, size))
    if representation == NODAL:
        g *= np.sqrt(J + 1.0)
    elif representation != MODAL:
        raise ValueError(f"unknown representation {representation!r}")
    return FieldState(g, representation)


def draw_coupled_pair(stream: NoiseStream, J: int, representation: str = MODAL, size=None):
    """Two independent draws and their normalized sum (g1 + g2)/sqrt(2).

    The sum is the full-step increment seen by single-noise schemes, so the
    modified scheme (driven by g1, g2) and the standard scheme (driven by the
    sum) follow the same Wiener path.
    """
    g1 = draw_cylindrical(stream, J, representation, size)
    g2 = draw_cylindrical(stream, J, representation, size)
    return g1, g2, g1.like((g1.values + g2.values) / np.sqrt(2.0))


def default_threads() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def run_replicas(
    fn: Callable[[NoiseStream, int], np.ndarray],
    M: int,
    master_seed: int = 0,
    block_size: int = DEFAULT_BLOCK,
    threads: Optional[int] = None,
    first_replica: int = 0,
) -> np.ndarray:
    """Evaluate ``fn(stream, n)`` over replica blocks and stack the results.

    Block ``k`` covers replicas ``k*block_size ..`` and uses stream
    ``(master_seed, first_replica + k)``.  ``fn`` must return an array
    whose first axis has length ``n``.  Output order is block order.
    """
    if M < 1:
        raise ValueError("need at least one replica")
    sizes = [block_size] * (M // block_size)
    if M % block_size:
        sizes.append(M % block_size)

    def task(k):
        return np.asarray(fn(NoiseStream(master_seed, first_replica + k), sizes[k]))

    threads = threads or default_threads()
    if threads == 1 or len(sizes) == 1:
        parts = [task(k) for k in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(task, range(len(sizes))))
    return np.concatenate(parts, axis=0)
