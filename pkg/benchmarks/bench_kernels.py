"""Time each hot kernel in its numba and numpy variants.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from stochlab.engine import heston_kernel_numba, heston_kernel_numpy
from stochlab.garch import recursion_numba, recursion_numpy, simulate_numba, simulate_numpy
from stochlab.reaction import integrate_numba, integrate_numpy
from stochlab.stable import hermite_numba, hermite_numpy, inversion_sums_numba, inversion_sums_numpy


def cases():
    rng = np.random.default_rng(0)
    z1, z2 = rng.standard_normal((2, 200, 252))
    hdt = np.full(252, 1 / 252)
    heston = (100.0, 0.04, 0.05, 2.0, 0.04, 0.5, -0.7, hdt, z1, z2)
    z = np.linspace(0, 20, 2000)
    u = np.linspace(1e-3, 40, 400)
    wt = np.exp(-u)
    grid = np.arange(2001) * 0.01
    herm = (rng.random(100_000) * 20, 0.01, np.sin(grid), np.cos(grid))
    integ = (0.2, 0.12, 0.1, 0.2, 0.01, 0.05, np.full(20_000, 0.1), True, 0)
    a2 = rng.standard_normal(20_000) ** 2
    rec = (a2, 0.05, np.array([0.1]), np.array([0.85]), 1.0)
    sim = (rng.standard_normal(20_000), 0.05, np.array([0.1]), np.array([0.85]), 1.0)
    return [
        ("heston 200x252", heston_kernel_numba, heston_kernel_numpy, heston),
        ("inversion sums 2000x400", inversion_sums_numba, inversion_sums_numpy, (z, u, wt)),
        ("hermite 1e5 points", hermite_numba, hermite_numpy, herm),
        ("reaction rk4 2e4 steps", integrate_numba, integrate_numpy, integ),
        ("garch recursion 2e4", recursion_numba, recursion_numpy, rec),
        ("garch simulate 2e4", simulate_numba, simulate_numpy, sim),
    ]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<26}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fast, slow, call in cases():
        fast(*call)  # compile outside the timed region
        tf = min(timeit.repeat(lambda: fast(*call), number=1, repeat=args.repeat)) * 1e3
        ts = min(timeit.repeat(lambda: slow(*call), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{tf:>10.2f}{ts:>10.2f}{ts / tf:>8.1f}x")


if __name__ == "__main__":
    main()
