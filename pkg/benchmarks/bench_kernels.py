"""Timing of the curvature kernels: numba loops against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py --size 256 --repeat 5
"""

import argparse
import timeit

import numpy as np

from horizon_forge import _kernels, make_gkdss, mass_bound
from horizon_forge.perturb2d import cheb_grid, static_metric_2d


def _inputs(size):
    space = make_gkdss(3, "s", 0.5 * mass_bound(3))
    grid = cheb_grid(space.profile.L, size, size, space.n)
    metric = static_metric_2d(space, grid)
    shape = grid.shape
    comps = [c.second_order_arrays(shape) for c in metric.components()]
    return comps, space.n - 2


def bench(size, repeat):
    comps, k = _inputs(size)
    E, F, G, P = comps
    rows = []
    paths = [("numpy", False)]
    if _kernels.jit_active():
        _kernels.curvature(E, F, G, P, k, use_jit=True)  # compile
        paths.append(("numba", True))
    ref = _kernels.curvature(E, F, G, P, k, use_jit=False)
    for name, jit in paths:
        t = min(timeit.repeat(lambda: _kernels.curvature(E, F, G, P, k, use_jit=jit),
                              number=1, repeat=repeat))
        err = float(np.max(np.abs(_kernels.curvature(E, F, G, P, k, use_jit=jit) - ref)))
        rows.append((name, t, err))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, nargs="+", default=[64, 128, 256])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    print(f"{'grid':>8} {'path':>6} {'seconds':>10} {'max |diff|':>11}")
    for size in args.size:
        for name, t, err in bench(size, args.repeat):
            print(f"{size:>8} {name:>6} {t:>10.4f} {err:>11.2e}")


if __name__ == "__main__":
    main()
