"""Compiled vs pure-Python simplex kernel.

Each backend runs in its own interpreter (the kernel is chosen at import
time via ``ROBSENS_BACKEND``). Workloads: the vertex-form bound LP on
simulated data and the column-generation bound solver, which calls the
simplex on small master problems many times.

    python3 benchmarks/bench_simplex.py [--sizes 50 100 200] [--repeat 3]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def run_workload(sizes, repeat):
    import numpy as np

    from robsens.bounds import BoundsProblem, SensitivityParams, solve_bounds
    from robsens.dataset import TransformSpec, build_designs
    from robsens.linprog import BACKEND
    from robsens.logistic import fit_mle
    from robsens.simulate import SimSpec, generate

    rows = []
    for n in sizes:
        ds = build_designs(generate(SimSpec(n, seed=11)).dataset, TransformSpec.identity(["x"]))
        P = BoundsProblem.from_fit(ds, fit_mle(ds), SensitivityParams.symmetric(np.e, 0.1))
        for form in ("compact", "colgen"):
            best, value = float("inf"), None
            for _ in range(repeat):
                t = time.perf_counter()
                r = solve_bounds(P, formulation=form)
                best = min(best, time.perf_counter() - t)
                value = (r.tau_min, r.tau_max)
            rows.append({"backend": BACKEND, "n": n, "formulation": form, "seconds": best, "bounds": value})
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(run_workload(args.sizes, args.repeat)))
        return
    results = {}
    for backend in ("cython", "python"):
        env = dict(os.environ, ROBSENS_BACKEND=backend)
        out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat),
                              "--sizes", *map(str, args.sizes)],
                             env=env, check=True, capture_output=True, text=True).stdout
        for row in json.loads(out):
            results[(row["backend"], row["n"], row["formulation"])] = row
    print(f"{'n':>5} {'formulation':>11} {'compiled s':>11} {'python s':>10} {'speedup':>8} {'max |diff|':>11}")
    for (backend, n, form), row in sorted(results.items(), key=lambda kv: (kv[0][1], kv[0][2])):
        if backend != "cython":
            continue
        py = results.get(("python", n, form))
        if py is None:
            print(f"{n:>5} {form:>11} {row['seconds']:>11.4f} {'n/a':>10}")
            continue
        diff = max(abs(a - b) for a, b in zip(row["bounds"], py["bounds"]))
        print(f"{n:>5} {form:>11} {row['seconds']:>11.4f} {py['seconds']:>10.4f} "
              f"{py['seconds'] / row['seconds']:>8.1f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
