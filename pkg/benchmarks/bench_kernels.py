"""Compare the compiled and pure-Python kernel backends.

Times the error-grid fill (one s0 solve plus two wing vols per cell), the
scalar Hagan vol and the DS tail shift, and checks that both backends give
bit-identical grids.

    python benchmarks/bench_kernels.py --grid 64 --repeat 3
"""

import argparse
import time

import numpy as np

from smilegrid._backend import get_kernels
from smilegrid.sabr import GridAxes, error_matrices
from smilegrid.synthetic import default_case


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_grid(kern, smile, size, workers, repeat):
    axes = GridAxes.uniform(size, size)
    return best_of(lambda: error_matrices(axes, smile, workers, kernels=kern, strict=False), repeat)


def bench_hagan(kern, p, n, repeat):
    ks = np.linspace(40.0, 250.0, n).tolist()
    f = kern.hagan_vol

    def run():
        for k in ks:
            f(p.f0, k, p.T, p.alpha, p.beta, p.rho, p.s0)

    return best_of(run, repeat)


def bench_shift(kern, n, inserts, repeat):
    def run():
        cap = n + inserts + 1
        xs = np.zeros(cap)
        ps = np.zeros(cap)
        zs = np.zeros(cap)
        size = n
        for _ in range(inserts):
            size = kern.ds_shift_insert(xs, ps, zs, size, 1, 0.5, 0.5, 0.0, 0.0)

    return best_of(run, repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--grid", type=int, default=64, help="grid side (cells = grid**2)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--hagan", type=int, default=100_000, help="scalar vol calls")
    ap.add_argument("--shift-size", type=int, default=20_000)
    ap.add_argument("--shift-inserts", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    case = default_case()
    try:
        cy = get_kernels("cython")
    except ImportError:
        print("compiled core not available; only the Python backend can run")
        return 1
    py = get_kernels("python")

    axes = GridAxes.uniform(args.grid, args.grid)
    a = error_matrices(axes, case.smile, kernels=cy, strict=False)
    b = error_matrices(axes, case.smile, kernels=py, strict=False)
    same = all(np.array_equal(x, y, equal_nan=True) for x, y in
               ((a.m_minus, b.m_minus), (a.m_plus, b.m_plus), (a.s0_grid, b.s0_grid)))

    rows = [
        (f"fill_grid {args.grid}x{args.grid}",
         bench_grid(cy, case.smile, args.grid, args.workers, args.repeat),
         bench_grid(py, case.smile, args.grid, 1, args.repeat)),
        (f"hagan_vol x{args.hagan}",
         bench_hagan(cy, case.truth, args.hagan, args.repeat),
         bench_hagan(py, case.truth, args.hagan, args.repeat)),
        (f"ds_shift_insert n={args.shift_size} x{args.shift_inserts}",
         bench_shift(cy, args.shift_size, args.shift_inserts, args.repeat),
         bench_shift(py, args.shift_size, args.shift_inserts, max(1, args.repeat // 3))),
    ]
    print(f"{'kernel':<40}{'cython s':>12}{'python s':>12}{'speedup':>10}")
    for name, tc, tp in rows:
        print(f"{name:<40}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}")
    print(f"grids bit-identical: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    raise SystemExit(main())
