"""Compare the compiled and numpy tridiagonal kernels.

Usage: python3 benchmarks/bench_kernels.py [--sizes 64,256,1024] [--batch 500] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from modeuler.kernels import available_backends, lower_solve, tridiag_cholesky, upper_solve


def fd_system(J, tau):
    h = 1.0 / (J + 1)
    diag = np.full(J, 1.0 + 2.0 * tau / h**2)
    off = np.full(J - 1, -tau / h**2)
    return diag, off


def bench(J, batch, repeat, backend):
    diag, off = fd_system(J, 0.01)
    rhs = np.random.default_rng(0).standard_normal((batch, J))
    ld, lo = tridiag_cholesky(diag, off, backend=backend)
    t_chol = min(timeit.repeat(lambda: tridiag_cholesky(diag, off, backend=backend), number=20, repeat=repeat)) / 20
    t_solve = min(timeit.repeat(lambda: upper_solve(ld, lo, lower_solve(ld, lo, rhs, backend=backend),
                                                    backend=backend), number=5, repeat=repeat)) / 5
    return t_chol, t_solve


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--sizes", default="64,256,1024")
    ap.add_argument("--batch", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = available_backends()
    print(f"{'J':>6} {'backend':>8} {'cholesky [us]':>14} {'solve batch [ms]':>17} {'speedup':>8}")
    for J in (int(s) for s in args.sizes.split(",")):
        results = {b: bench(J, args.batch, args.repeat, b) for b in backends}
        base = results["python"][1]
        for b, (tc, ts) in results.items():
            print(f"{J:>6} {b:>8} {tc * 1e6:>14.1f} {ts * 1e3:>17.3f} {base / ts:>8.1f}")


if __name__ == "__main__":
    main()
