"""Compare the compiled core with the numpy fallback.

Times one right-hand-side evaluation (pair rates plus gain accumulation) and
the power-law table build for a few grid sizes, and checks that the two
backends agree.

    python benchmarks/bench_backends.py [--cells 100 200 400] [--threads 1 4]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from nlfrag import backend
from nlfrag.grid import _pair_layout, build_allocation_table, make_geometric
from nlfrag.kernels import CollisionKernel, PowerLawBreakage
from nlfrag.solver import Rhs


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_build(grid, name, max_pairs):
    pi, pj, offsets, _ = _pair_layout(grid)
    if name == "python" and pi.shape[0] > max_pairs:
        return None
    impl = backend.get(name)
    data = np.zeros(int(offsets[-1]))
    return best_of(lambda: impl.build_power_rows(grid.edges, grid.pivots, -0.5, 0, pi, pj, offsets, data), 1)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, nargs="+", default=[100, 200, 400])
    ap.add_argument("--threads", type=int, nargs="+", default=[1, 4])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--python-build-pairs", type=int, default=25_000,
                    help="skip the (slow) python table build above this many pairs")
    args = ap.parse_args(argv)
    names = backend.available()
    print(f"backends: {', '.join(names)} (default: {backend.NAME})")
    print(f"{'cells':>6} {'pairs':>8} {'entries':>10} {'backend':>9} {'threads':>7} {'rhs ms':>9} {'build s':>8}")
    collision = CollisionKernel(1.0, 0.3, 0.5)
    for cells in args.cells:
        grid = make_geometric(1e-7, 40.0, cells)
        table = build_allocation_table(grid, collision, PowerLawBreakage(-0.5))
        g = np.exp(-grid.pivots) * grid.widths
        results = {}
        for name in names:
            build = bench_build(grid, name, args.python_build_pairs)
            for k in args.threads:
                rhs = Rhs(table, threads=k, backend_name=name)
                results[(name, k)] = rhs(g)
                t = best_of(lambda: rhs(g), args.repeat)
                build_txt = f"{build:8.2f}" if build is not None else f"{'skipped':>8}"
                print(f"{cells:6d} {table.npairs:8d} {table.data.size:10d} {name:>9} {k:7d} {1e3 * t:9.2f} "
                      f"{build_txt}")
        ref = next(iter(results.values()))
        worst = max(float(np.max(np.abs(v - ref))) for v in results.values()) / float(np.max(np.abs(ref)))
        print(f"{'':6} max relative disagreement across backends/threads: {worst:.2e}")


if __name__ == "__main__":
    main()
