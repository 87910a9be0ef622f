"""Time the hot kernels under the numba and numpy backends.

Each backend runs in its own interpreter because the backend is fixed at
import time. Usage::

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from dpgwave import _kernels as K
from dpgwave.experiments import rect_mode_problem
from dpgwave.mesh import build_waveguide_mesh
from dpgwave.dpg import assemble_solve, clear_cache

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)

def best(fn):
    fn()                                    # warm-up (numba compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter(); fn(); times.append(time.perf_counter() - t0)
    return min(times)

def table(n):
    w = rng.integers(1, 50, n).astype(float)
    c = np.concatenate([[0.0], np.cumsum(w)])
    return c[None, :] - c[:, None]

t = np.linspace(0.0, 1.0, 2000)
small, large = table(24), table(200)
cost = np.zeros((8, 201, 201))
bound = K.bottleneck_value(large, 8)

def solve():
    clear_cache()
    prob = rect_mode_problem(2 * np.pi, 3)
    mesh = build_waveguide_mesh(8, 4, 4, 3, wavelength=prob.mode.wavelength)
    assemble_solve(mesh, prob)

out = {
    "backend": K.BACKEND,
    "legendre_table(2000 pts, n=12)": best(lambda: K.legendre_table(t, 12)),
    "integrated_legendre_table(2000 pts, n=12)": best(lambda: K.integrated_legendre_table(t, 12)),
    "bottleneck_value(200 slabs, 8 ranks)": best(lambda: K.bottleneck_value(large, 8)),
    "max_sum_cuts(200 slabs, 8 ranks)": best(lambda: K.max_sum_cuts(large, 8, bound)),
    "min_migration_cuts(200 slabs, 8 ranks)": best(lambda: K.min_migration_cuts(large, 8, bound, cost)),
    "exhaustive_cuts(24 slabs, 4 ranks)": best(lambda: K.exhaustive_cuts(small, 4)),
    "assemble_solve(8 wavelengths, p=3)": best(solve),
}
print(json.dumps(out))
"""


def run(backend: str, repeat: int) -> dict:
    env = dict(os.environ, DPGWAVE_NUMBA="1" if backend == "numba" else "0")
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    nb, npy = run("numba", args.repeat), run("numpy", args.repeat)
    if nb["backend"] != "numba":
        print("numba is unavailable; both columns use the numpy backend")
    width = max(len(k) for k in nb if k != "backend")
    print(f"{'kernel':<{width}}  {'numba [ms]':>11}  {'numpy [ms]':>11}  {'speedup':>8}")
    for key in nb:
        if key == "backend":
            continue
        a, b = 1e3 * nb[key], 1e3 * npy[key]
        print(f"{key:<{width}}  {a:11.3f}  {b:11.3f}  {b / a:8.1f}")


if __name__ == "__main__":
    main()
