"""Pure-Python fallback for the compiled stepper kernels.

Mirrors the arithmetic of _kernels.pyx operation for operation so both
backends produce identical trajectories; it is much slower and is selected
only when the extension is unavailable (or forced via
SPHERESDE_FORCE_PYTHON=1).
"""

from __future__ import annotations

import math

import numpy as np


def _fp_step(up, u, v, k, sqrtD, dW, fp_tol, fp_max_iter, first):
    inv_prev = 1.0 - (up[0] * up[0] + up[1] * up[1] + up[2] * up[2])
    c0 = c1 = c2 = 0.0
    if first:
        c0 = k * v[0] + u[0] - up[0]
        c1 = k * v[1] + u[1] - up[1]
        c2 = k * v[2] + u[2] - up[2]
    V0, V1, V2 = v[0], v[1], v[2]
    q = 0.25 * sqrtD * dW
    lam = 0.0
    for it in range(fp_max_iter):
        Un0 = u[0] + k * V0
        Un1 = u[1] + k * V1
        Un2 = u[2] + k * V2
        S0 = Un0 + up[0]
        S1 = Un1 + up[1]
        S2 = Un2 + up[2]
        w2 = 0.25 * (S0 * S0 + S1 * S1 + S2 * S2)
        if w2 < 1e-24:
            lam = 0.0
        elif first:
            num = inv_prev - (c0 * S0 + c1 * S1 + c2 * S2)
            lam = num / (2.0 * k * k * w2)
        else:
            num = -(v[0] * S0 + v[1] * S1 + v[2] * S2) + inv_prev / (2.0 * k)
            lam = num / (k * w2)
        a0 = V0 + v[0]
        a1 = V1 + v[1]
        a2 = V2 + v[2]
        x0 = S1 * a2 - S2 * a1
        x1 = S2 * a0 - S0 * a2
        x2 = S0 * a1 - S1 * a0
        N0 = v[0] + 0.5 * k * lam * S0 + q * x0
        N1 = v[1] + 0.5 * k * lam * S1 + q * x1
        N2 = v[2] + 0.5 * k * lam * S2 + q * x2
        d = max(abs(N0 - V0), abs(N1 - V1), abs(N2 - V2))
        V0, V1, V2 = N0, N1, N2
        if d < fp_tol:
            return (
                (u[0] + k * V0, u[1] + k * V1, u[2] + k * V2),
                (V0, V1, V2),
                lam,
                it + 1,
            )
    return None, None, lam, -1


def implicit_step(up, u, v, k, sqrtD, dW, fp_tol, fp_max_iter, first):
    un, vn, lam, its = _fp_step(
        tuple(up), tuple(u), tuple(v), k, sqrtD, dW, fp_tol, fp_max_iter, first
    )
    if its < 0:
        return np.empty(3), np.empty(3), lam, its
    return np.array(un), np.array(vn), lam, its


def implicit_path(up0, u0, v0, k, sqrtD, dW, fp_tol, fp_max_iter,
                  first_general, snap_idx, snap_u, snap_v,
                  lam_out=None, iters_out=None):
    up = (up0[0], up0[1], up0[2])
    u = (u0[0], u0[1], u0[2])
    v = (v0[0], v0[1], v0[2])
    e0 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
    cmax = emax = 0.0
    total_its = 0
    n = len(dW)
    m = len(snap_idx)
    si = 0
    while si < m and snap_idx[si] == 0:
        snap_u[si, :] = u
        snap_v[si, :] = v
        si += 1
    for i in range(n):
        un, vn, lam, its = _fp_step(up, u, v, k, sqrtD, dW[i], fp_tol,
                                    fp_max_iter, first_general and i == 0)
        if its < 0:
            return i, cmax, emax, total_its
        total_its += its
        if lam_out is not None:
            lam_out[i] = lam
        if iters_out is not None:
            iters_out[i] = its
        up, u, v = u, un, vn
        cv = abs(math.sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]) - 1.0)
        if cv > cmax:
            cmax = cv
        ev = abs(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - e0)
        if ev > emax:
            emax = ev
        while si < m and snap_idx[si] == i + 1:
            snap_u[si, :] = u
            snap_v[si, :] = v
            si += 1
    return -1, cmax, emax, total_its


def em_path(u0, v0, k, D, sqrtD, dW, snap_idx, snap_u, snap_v):
    u = (u0[0], u0[1], u0[2])
    v = (v0[0], v0[1], v0[2])
    n = len(dW)
    m = len(snap_idx)
    si = 0
    while si < m and snap_idx[si] == 0:
        snap_u[si, :] = u
        snap_v[si, :] = v
        si += 1
    for i in range(n):
        dw = dW[i]
        v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        nu0 = v[0] + k * (-v2 * u[0] - 0.5 * D * v[0]) + sqrtD * (u[1] * v[2] - u[2] * v[1]) * dw
        nu1 = v[1] + k * (-v2 * u[1] - 0.5 * D * v[1]) + sqrtD * (u[2] * v[0] - u[0] * v[2]) * dw
        nu2 = v[2] + k * (-v2 * u[2] - 0.5 * D * v[2]) + sqrtD * (u[0] * v[1] - u[1] * v[0]) * dw
        u = (u[0] + k * v[0], u[1] + k * v[1], u[2] + k * v[2])
        v = (nu0, nu1, nu2)
        while si < m and snap_idx[si] == i + 1:
            snap_u[si, :] = u
            snap_v[si, :] = v
            si += 1
    return -1
