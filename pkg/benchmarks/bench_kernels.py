"""Benchmark the compiled stepper kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [steps]
"""

import math
import sys
import time

import numpy as np

from spheresde import _kernels_py
from spheresde import backend
from spheresde.geometry import BundleState
from spheresde.integrator import NoiseStream, StepConfig, startup_gamma


def run(kernels, up0, u0, v0, k, sqrtD, dW):
    snap_idx = np.array([len(dW)], dtype=np.int64)
    snap_u = np.empty((1, 3))
    snap_v = np.empty((1, 3))
    t0 = time.perf_counter()
    status, cmax, emax, its = kernels.implicit_path(
        up0, u0, v0, k, sqrtD, dW, 1e-13, 100, True, snap_idx, snap_u, snap_v
    )
    dt = time.perf_counter() - t0
    assert status == -1
    return dt, cmax, emax, snap_u[0], snap_v[0]


def main():
    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 60000
    k, D = 1e-3, 1.0
    cfg = StepConfig(k=k, D=D)
    z0 = BundleState([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
    dW = NoiseStream(1234, 0, k).increments(steps)
    gamma = startup_gamma(z0, float(dW[0]), cfg)
    up0 = z0.u - k * (1.0 + gamma) * z0.v

    if not backend.HAVE_COMPILED:
        print("compiled extension unavailable; benchmarking fallback only")
    results = {}
    for name, kernels in (("compiled", backend.kernels),
                          ("python", _kernels_py)):
        if name == "compiled" and not backend.HAVE_COMPILED:
            continue
        dt, cmax, emax, uT, vT = run(kernels, up0, z0.u, z0.v, k,
                                     math.sqrt(D), dW)
        results[name] = (dt, uT, vT)
        print(f"{name:>9}: {steps} steps in {dt:.3f} s "
              f"({steps / dt:,.0f} steps/s), constraint {cmax:.2e}, "
              f"energy drift {emax:.2e}")
    if len(results) == 2:
        speedup = results["python"][0] / results["compiled"][0]
        identical = (np.array_equal(results["python"][1], results["compiled"][1])
                     and np.array_equal(results["python"][2],
                                        results["compiled"][2]))
        print(f"speedup: {speedup:.1f}x, trajectories identical: {identical}")


if __name__ == "__main__":
    main()
