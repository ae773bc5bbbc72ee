"""Timing comparison of the compiled kernels against the pure-numpy path.

Runs the same workloads twice in subprocesses, once with WEAKGRID_NUMBA=1
(default) and once with WEAKGRID_NUMBA=0, and prints a small table.

Usage: python benchmarks/bench_kernels.py [--samples N]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

_WORKLOAD = """
import json
import time
import numpy as np
from weakgrid._jit import NUMBA_ENABLED
from weakgrid.cir import CirParams
from weakgrid.grids import CirNvScheme, HestonNvScheme, boosted_estimate
from weakgrid.heston import HestonParams
from weakgrid.kernels import heston_x_step, nv_phi_arr

samples = {samples}
p = CirParams(a=0.2, b=0.5, sigma=0.65, x0=0.0)
hp = HestonParams(r=0.0, rho=-0.7,
                  cir=CirParams(a=0.2, b=1.0, sigma=0.5, x0=0.2),
                  x0=np.log(100.0))
rng = np.random.default_rng(0)
x = rng.uniform(0.05, 1.0, samples)
w = rng.standard_normal(samples) * 0.1

timings = {{}}

# warm-up triggers compilation so it is not measured
nv_phi_arr(x[:16], 0.1, w[:16], p.a, p.b, p.sigma)
t0 = time.perf_counter()
for _ in range(20):
    nv_phi_arr(x, 0.1, w, p.a, p.b, p.sigma)
timings["nv_phi_arr"] = (time.perf_counter() - t0) / 20

y2 = nv_phi_arr(x, 0.1, w, p.a, p.b, p.sigma)
heston_x_step(x[:16], x[:16], y2[:16], 0.1, w[:16], 0.0, -0.7,
              hp.cir.a, hp.cir.b, hp.cir.sigma)
t0 = time.perf_counter()
for _ in range(20):
    heston_x_step(x, x, y2, 0.1, w, 0.0, -0.7,
                  hp.cir.a, hp.cir.b, hp.cir.sigma)
timings["heston_x_step"] = (time.perf_counter() - t0) / 20

f = lambda st: np.exp(-10.0 * st["x"])
scheme = CirNvScheme(p, T=1.0)
boosted_estimate(scheme, f, 3, 2, 1024, "standard", np.random.default_rng(1))
t0 = time.perf_counter()
boosted_estimate(scheme, f, 3, 2, samples, "standard",
                 np.random.default_rng(1))
timings["cir_boost_level2"] = time.perf_counter() - t0

put = lambda st: np.maximum(105.0 - np.exp(st["x"]), 0.0)
hscheme = HestonNvScheme(hp, T=1.0)
boosted_estimate(hscheme, put, 3, 2, 1024, "vol_weighted",
                 np.random.default_rng(2))
t0 = time.perf_counter()
boosted_estimate(hscheme, put, 3, 2, samples, "vol_weighted",
                 np.random.default_rng(2))
timings["heston_boost_level2"] = time.perf_counter() - t0

print(json.dumps({{"numba": NUMBA_ENABLED, "timings": timings}}))
"""


def run(flag: str, samples: int) -> dict:
    env = dict(os.environ, WEAKGRID_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c",
                          _WORKLOAD.format(samples=samples)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=200_000)
    args = ap.parse_args()

    jit = run("1", args.samples)
    plain = run("0", args.samples)
    assert jit["numba"] and not plain["numba"]

    print(f"{args.samples} samples per workload")
    print(f"{'workload':<22}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>9}")
    for key, tj in jit["timings"].items():
        tp = plain["timings"][key]
        print(f"{key:<22}{tj:>12.4f}{tp:>12.4f}{tp / tj:>8.1f}x")


if __name__ == "__main__":
    main()
