"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--cells 32 256 2048] [--repeat 200]

Kernel timings call both backends directly; the end-to-end timing reruns a
penalized obstacle solve in a subprocess with OSPDE_PURE_PYTHON=1.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ospde import _kernels_py

try:
    from ospde import _kernels
except ImportError:
    _kernels = None

SOLVE = """
import time
import numpy as np
from ospde.coefficients import CoefficientSet, ObstacleSpec, ProblemSpec, make_field
from ospde.grid import EllipticCoefficients, assemble_operator, build_grid
from ospde.kernels import BACKEND
from ospde.noise import sample_path
from ospde.obstacle_solver import solve_obstacle
g = build_grid(1, [1.0], [{cells}])
op = assemble_operator(g, EllipticCoefficients.constant(g))
coeff = CoefficientSet.build(f={{"name": "sine", "amp": 0.5, "c": -2.0}}, h=[{{"name": "constant", "c": 0.3}}])
spec = ProblemSpec(g, op, coeff, make_field(g, 0.6), 1.0, 1e-3, J=1,
                   obstacle=ObstacleSpec("direct", values=np.full(g.n_cells, 0.5)))
p = sample_path(0, 1, spec.dt, spec.steps)
t = time.perf_counter()
solve_obstacle(spec, p, n_schedule=[1e2, 1e3, 1e4])
print(BACKEND, time.perf_counter() - t)
"""


def system(n, rng):
    off = -np.ones(n)
    diag = 2.5 + rng.random(n)
    return off, diag, off.copy(), rng.normal(size=n), rng.normal(size=n) + 0.5


def per_call(fn, repeat):
    return min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat


def bench_kernels(cells, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for n in cells:
        sub, diag, sup, rhs, obs = system(n, rng)
        for name, call in (
            ("tridiag", lambda m: m.tridiag_solve(sub, diag, sup, rhs)),
            ("penalized", lambda m: m.penalized_tridiag_solve(sub, diag, sup, rhs, obs, 10.0, 50, 1e-10)),
        ):
            py = per_call(lambda: call(_kernels_py), repeat)
            cy = per_call(lambda: call(_kernels), repeat) if _kernels else float("nan")
            rows.append((name, n, py, cy))
    return rows


def bench_solve(cells):
    out = {}
    for label, env in (("cython", {}), ("python", {"OSPDE_PURE_PYTHON": "1"})):
        res = subprocess.run([sys.executable, "-c", SOLVE.format(cells=cells)], capture_output=True,
                             text=True, env={**os.environ, **env}, check=True)
        backend, seconds = res.stdout.split()
        out[label] = (backend, float(seconds))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, nargs="+", default=[32, 256, 2048])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--solve-cells", type=int, default=64)
    args = ap.parse_args(argv)

    print(f"{'kernel':<10} {'cells':>6} {'python us':>11} {'cython us':>11} {'speedup':>8}")
    for name, n, py, cy in bench_kernels(args.cells, args.repeat):
        print(f"{name:<10} {n:>6} {py * 1e6:>11.1f} {cy * 1e6:>11.1f} {py / cy:>7.1f}x")

    solve = bench_solve(args.solve_cells)
    print(f"\nobstacle solve, {args.solve_cells} cells, 1000 steps, n in (1e2, 1e3, 1e4):")
    for label, (backend, seconds) in solve.items():
        print(f"  {label:<7} (loaded {backend}) {seconds:.3f} s")
    print(f"  speedup {solve['python'][1] / solve['cython'][1]:.2f}x")


if __name__ == "__main__":
    main()
