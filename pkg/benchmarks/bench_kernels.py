"""Timing comparison of the stepping kernels: compiled extension vs numpy
fallback, plus an end-to-end solve with each backend.

Run:  python3 benchmarks/bench_kernels.py [--steps N] [--sizes 128,512,2048]
"""

import argparse
import time

import numpy as np

from spdelab._kernels import available_backends
from spdelab.model import make_family
from spdelab.noise import NoiseConfig, sample_path
from spdelab.solver import make_grid, solve_realization


def bench_kernel(kern, nx, steps, chunk=256):
    rng = np.random.default_rng(0)
    u = rng.standard_normal(nx)
    h = 2.0 * np.pi / nx
    dt = 0.2 * h * h  # keep the diffusion weight inside the stability region
    alap = np.full((chunk, nx), dt)
    agrad = rng.standard_normal((chunk, nx)) * 0.3 * np.sqrt(dt)
    aself = rng.standard_normal((chunk, nx)) * 0.2 * np.sqrt(dt)
    asrc = rng.standard_normal((chunk, nx)) * dt
    out = np.empty((chunk, nx))
    done = 0
    t0 = time.perf_counter()
    while done < steps:
        ns = min(chunk, steps - done)
        bad = kern.step_periodic(u, alap[:ns], agrad[:ns], aself[:ns],
                                 asrc[:ns], 1.0 / h ** 2, 0.5 / h, 1e12,
                                 out[:ns])
        if bad >= 0:
            raise RuntimeError("unexpected blow-up in benchmark")
        done += ns
    el = time.perf_counter() - t0
    return steps * nx / el, el


def bench_solve(backend, n_points):
    spec = make_family("trig", horizon=0.25, sigma0=0.3, g1=0.2)
    grid = make_grid(spec, n_points)
    path = sample_path(NoiseConfig(spec.modes, grid.n_steps, grid.horizon), 0, 0)
    t0 = time.perf_counter()
    sol = solve_realization(spec, path, grid, store="final", backend=backend)
    return time.perf_counter() - t0, sol.values[-1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=20000,
                    help="kernel steps per size (default 20000)")
    ap.add_argument("--sizes", default="128,512,2048",
                    help="comma list of grid sizes")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    backends = available_backends()
    print("backends:", ", ".join(sorted(backends)))

    print("\nraw kernel throughput (node updates / s), %d steps:" % args.steps)
    header = "  %8s" + "  %14s" * len(backends)
    names = sorted(backends)
    print(header % (("nx",) + tuple(names)))
    speed = {}
    for nx in sizes:
        row = [nx]
        for name in names:
            rate, _ = bench_kernel(backends[name], nx, args.steps)
            speed[(name, nx)] = rate
            row.append("%.3g" % rate)
        print(header % tuple(row))
    if "compiled" in backends:
        for nx in sizes:
            print("  nx=%-5d compiled/fallback speedup: %.1fx"
                  % (nx, speed[("compiled", nx)] / speed[("fallback", nx)]))

    print("\nend-to-end solve (trig family, horizon 0.25):")
    for n_points in sizes:
        finals = {}
        for name in names:
            el, final = bench_solve(name, n_points)
            finals[name] = final
            print("  nx=%-5d %-9s %.3fs" % (n_points, name, el))
        if len(finals) == 2:
            diff = float(np.max(np.abs(finals["compiled"] - finals["fallback"])))
            print("  nx=%-5d max |compiled - fallback| = %.3g" % (n_points, diff))


if __name__ == "__main__":
    main()
