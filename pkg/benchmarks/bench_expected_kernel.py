"""Benchmark: compiled quadrature backend vs the pure-NumPy fallback.

Times the two hot kernels (uncertain-to-grid cross Gram and nested
uncertain-pair Gram) at mission-representative sizes. Each backend runs in
a subprocess because the backend is chosen once at import time
(AMAP_PURE_PYTHON=1 forces the fallback).

Usage: python3 benchmarks/bench_expected_kernel.py [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from amap import _backend
from amap.quadrature import UncertainPoint, gauss_hermite_rule, quadrature_points

repeats = int(sys.argv[1])
rule = gauss_hermite_rule(3)
rng = np.random.default_rng(0)

n_train, n_grid = 30, 729
clouds = np.empty((n_train, rule.order**3, 3))
for i in range(n_train):
    cov = np.diag(rng.uniform(0.001, 0.05, size=3))
    pts, w = quadrature_points(
        UncertainPoint.from_moments(rng.uniform(0, 2, size=3), cov), rule
    )
    clouds[i] = pts
grid = rng.uniform(0, 2, size=(n_grid, 3))

def timeit(fn):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best

results = {
    "backend": _backend.BACKEND_NAME,
    "cross_gram_30x729": timeit(
        lambda: _backend.cross_gram(0, 1.0, 0.6, clouds, w, grid)
    ),
    "pair_cross_30x30": timeit(
        lambda: _backend.pair_cross(0, 1.0, 0.6, clouds, w, clouds, w)
    ),
}
print(json.dumps(results))
"""


def run_backend(pure_python: bool, repeats: int) -> dict:
    env = dict(os.environ)
    env["AMAP_PURE_PYTHON"] = "1" if pure_python else "0"
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(repeats)],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    compiled = run_backend(False, args.repeats)
    fallback = run_backend(True, args.repeats)
    if compiled["backend"] == fallback["backend"]:
        print("note: compiled extension unavailable; both runs used the fallback")

    keys = [k for k in compiled if k != "backend"]
    width = max(len(k) for k in keys)
    print(f"{'kernel':<{width}}  {compiled['backend']:>12}  "
          f"{fallback['backend']:>12}  speedup")
    for k in keys:
        ratio = fallback[k] / compiled[k]
        print(f"{k:<{width}}  {compiled[k]*1e3:>10.2f}ms  "
              f"{fallback[k]*1e3:>10.2f}ms  {ratio:>6.2f}x")


if __name__ == "__main__":
    main()
