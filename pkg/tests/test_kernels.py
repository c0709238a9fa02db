"""Backend equivalence: compiled extension vs pure-Python fallback."""

import math
import subprocess
import sys

import numpy as np
import pytest

from spheresde import _kernels_py, backend
from spheresde.geometry import BundleState
from spheresde.integrator import NoiseStream, StepConfig, startup_gamma

Z0 = BundleState([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])


def path_inputs(n=2000, k=1e-3, D=1.0, seed=1234):
    cfg = StepConfig(k=k, D=D)
    dW = NoiseStream(seed, 0, k).increments(n)
    gamma = startup_gamma(Z0, float(dW[0]), cfg)
    up0 = Z0.u - k * (1.0 + gamma) * Z0.v
    return up0, dW, cfg


def run_implicit(kernels, up0, dW, cfg):
    n = len(dW)
    snap_idx = np.array([0, n // 2, n], dtype=np.int64)
    snap_u = np.empty((3, 3))
    snap_v = np.empty((3, 3))
    lam = np.empty(n)
    iters = np.empty(n, dtype=np.int64)
    status = kernels.implicit_path(
        up0, Z0.u, Z0.v, cfg.k, cfg.sqrtD, dW, cfg.fp_tol, cfg.fp_max_iter,
        True, snap_idx, snap_u, snap_v, lam, iters,
    )
    return status, snap_u, snap_v, lam, iters


@pytest.mark.skipif(not backend.HAVE_COMPILED,
                    reason="compiled extension unavailable")
class TestBackendEquivalence:
    def test_implicit_paths_bit_identical(self):
        up0, dW, cfg = path_inputs()
        sc, uc, vc, lamc, itc = run_implicit(backend.kernels, up0, dW, cfg)
        sp, upy, vpy, lamp, itp = run_implicit(_kernels_py, up0, dW, cfg)
        assert sc[0] == sp[0] == -1
        assert np.array_equal(uc, upy)
        assert np.array_equal(vc, vpy)
        assert np.array_equal(lamc, lamp)
        assert np.array_equal(itc, itp)

    def test_em_paths_bit_identical(self):
        _, dW, cfg = path_inputs()
        n = len(dW)
        snap_idx = np.array([n], dtype=np.int64)
        outs = []
        for kernels in (backend.kernels, _kernels_py):
            su = np.empty((1, 3))
            sv = np.empty((1, 3))
            kernels.em_path(Z0.u, Z0.v, cfg.k, cfg.D, cfg.sqrtD, dW,
                            snap_idx, su, sv)
            outs.append((su.copy(), sv.copy()))
        assert np.array_equal(outs[0][0], outs[1][0])
        assert np.array_equal(outs[0][1], outs[1][1])

    def test_single_step_identical(self):
        up0, dW, cfg = path_inputs(n=1)
        a = backend.kernels.implicit_step(up0, Z0.u, Z0.v, cfg.k, cfg.sqrtD,
                                          float(dW[0]), cfg.fp_tol, 100, True)
        b = _kernels_py.implicit_step(up0, Z0.u, Z0.v, cfg.k, cfg.sqrtD,
                                      float(dW[0]), cfg.fp_tol, 100, True)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])
        assert a[2] == b[2] and a[3] == b[3]

    def test_nonconvergence_reported_identically(self):
        up0, dW, cfg = path_inputs(n=50, D=10000.0)
        strong = 50.0 * np.abs(dW) + 0.1
        c = run_implicit(backend.kernels, up0, strong, cfg)
        p = run_implicit(_kernels_py, up0, strong, cfg)
        assert c[0][0] == p[0][0] >= 0


class TestForcedFallback:
    def test_env_var_selects_python_backend(self):
        code = (
            "import os; os.environ['SPHERESDE_FORCE_PYTHON'] = '1'\n"
            "from spheresde import backend\n"
            "assert not backend.HAVE_COMPILED\n"
            "assert backend.BACKEND_NAME == 'python'\n"
        )
        subprocess.run([sys.executable, "-c", code], check=True)

    def test_fallback_path_runs(self):
        up0, dW, cfg = path_inputs(n=500)
        status, su, sv, lam, iters = run_implicit(_kernels_py, up0, dW, cfg)
        assert status[0] == -1
        assert abs(np.linalg.norm(su[-1]) - 1.0) < 1e-12
        e = float(sv[-1] @ sv[-1])
        assert abs(e - 1.0) < 1e-11
