"""Numba vs numpy timings of the hot kernels.

    python benchmarks/bench_kernels.py [--sizes 513 1025 2049] [--repeat 5]

Each kernel is called once per backend before timing so numba compilation
is excluded. Results of the two backends are compared as well.
"""
import argparse
import time

import numpy as np

from fatselect._accel import HAVE_NUMBA
from fatselect._kernels import FLUX_GODUNOV, hj_flux_kernel, log_growth_hull, nonlocal_operator_kernel
from fatselect.grid import Grid1D
from fatselect.kernel import KernelParams, build_hamiltonian_table
from fatselect.model import envelope_shape
from fatselect.pde import build_quadrature_plan


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[513, 1025, 2049])
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba unavailable or disabled: only the numpy backend is timed")
    alpha = 0.5
    kp = KernelParams(alpha)
    table = build_hamiltonian_table(alpha)
    backends = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    print(f"{'kernel':<12}{'N':>6}" + "".join(f"{b + ' [ms]':>14}" for b in backends) + f"{'speedup':>10}{'max diff':>12}")
    for N in args.sizes:
        g = Grid1D(10.0, N)
        u = envelope_shape(g.x, 0.25, 1.0) + 0.05 * np.cos(g.x)
        plan = build_quadrature_plan(g, args.eps, kp, A_ext=0.25)
        v = u - u.max()
        cases = {
            "operator": lambda b: nonlocal_operator_kernel(u, plan, b)[0],
            "hj_flux": lambda b: hj_flux_kernel(v, g.dx, table, FLUX_GODUNOV, table.theta, b),
            "log_hull": lambda b: log_growth_hull(v - 0.9 * np.abs(g.x), g.x, alpha, b),
        }
        for name, fn in cases.items():
            t = [best_of(lambda: fn(b), args.repeat) for b in backends]
            outs = [fn(b) for b in backends]
            diff = float(np.max(np.abs(outs[0] - outs[-1])))
            speed = t[-1] / t[0] if len(t) > 1 else float("nan")
            print(f"{name:<12}{N:>6}" + "".join(f"{1e3 * x:>14.3f}" for x in t) + f"{speed:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
