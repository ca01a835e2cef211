"""Time the compiled loops against the numpy fallback.

    python3 benchmarks/bench_backends.py [--N 128 256] [--repeat 3]

Prints one line per (task, size) with both timings, the speed-up and the
largest relative difference between the two results.
"""
import argparse
import time

import numpy as np

from nodalfrac import backend
from nodalfrac.constants import Params
from nodalfrac.discretization import RadialFn, assemble_forms, build_grid
from nodalfrac.extension import extend


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--N", type=int, nargs="+", default=[128, 256])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n", type=int, default=7)
    ap.add_argument("--s", type=float, default=0.75)
    args = ap.parse_args()
    try:
        backend.get("cython")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return
    p = Params(args.n, args.s)
    rng = np.random.default_rng(0)
    print(f"{'task':<12}{'N':>6}{'cython [s]':>12}{'python [s]':>12}{'speed-up':>10}{'max rel diff':>14}")
    for N in args.N:
        g = build_grid(p, N, 2.0, 2.0)
        tc, fc = best_of(lambda: assemble_forms(g, p, backend="cython"), args.repeat)
        tp, fp = best_of(lambda: assemble_forms(g, p, backend="python"), args.repeat)
        diff = np.max(np.abs(fc.stiffness - fp.stiffness)) / np.max(np.abs(fp.stiffness))
        print(f"{'assemble':<12}{N:>6}{tc:>12.3f}{tp:>12.3f}{tp / tc:>10.2f}{diff:>14.2e}")

        m = 200_000
        r = rng.uniform(0, 1, m)
        rho = rng.uniform(0, 1, m)
        tc, kc = best_of(lambda: backend.get("cython").pair_weights(r, rho, float(p.n), p.s), args.repeat)
        tp, kp = best_of(lambda: backend.get("python").pair_weights(r, rho, float(p.n), p.s), args.repeat)
        diff = np.max(np.abs(kc - kp) / np.abs(kp))
        print(f"{'kernel':<12}{m:>6}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.2f}{diff:>14.2e}")

        u = RadialFn.from_function(g, lambda x: np.cos(np.pi * x / 2))
        tc, ec = best_of(lambda: extend(u, p, backend_name="cython"), 1)
        tp, ep = best_of(lambda: extend(u, p, backend_name="python"), 1)
        diff = np.max(np.abs(ec.W - ep.W)) / np.max(np.abs(ep.W))
        print(f"{'extend':<12}{N:>6}{tc:>12.3f}{tp:>12.3f}{tp / tc:>10.2f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
