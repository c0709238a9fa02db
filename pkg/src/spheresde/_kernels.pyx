# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the implicit and Euler-Maruyama time steppers.

The pure-Python fallback (_kernels_py) mirrors the arithmetic of this
module operation for operation, so both backends produce identical
trajectories.
"""

from libc.math cimport fabs, sqrt

import numpy as np


cdef inline double _absmax3(double a, double b, double c) nogil:
    cdef double m = fabs(a)
    if fabs(b) > m:
        m = fabs(b)
    if fabs(c) > m:
        m = fabs(c)
    return m


cdef int _fp_step(double* up, double* u, double* v,
                  double k, double sqrtD, double dW,
                  double fp_tol, int fp_max_iter, bint first,
                  double* u_out, double* v_out, double* lam_out) nogil:
    """One implicit step solved by fixed-point iteration on V^{n+1}.

    Returns the iteration count on success, -1 on nonconvergence.  When
    `first` is set, the generalized constraint multiplier for an arbitrary
    previous point U^{-1} is used (it reduces to the standard formula when
    U^0 - U^{-1} = k V^0).
    """
    cdef double inv_prev = 1.0 - (up[0] * up[0] + up[1] * up[1] + up[2] * up[2])
    cdef double c0 = 0.0, c1 = 0.0, c2 = 0.0
    cdef double V0, V1, V2, Un0, Un1, Un2, S0, S1, S2
    cdef double w2, num, lam, q, a0, a1, a2, x0, x1, x2, N0, N1, N2, d
    cdef int it
    if first:
        c0 = k * v[0] + u[0] - up[0]
        c1 = k * v[1] + u[1] - up[1]
        c2 = k * v[2] + u[2] - up[2]
    V0 = v[0]; V1 = v[1]; V2 = v[2]
    q = 0.25 * sqrtD * dW
    lam = 0.0
    for it in range(fp_max_iter):
        Un0 = u[0] + k * V0
        Un1 = u[1] + k * V1
        Un2 = u[2] + k * V2
        S0 = Un0 + up[0]; S1 = Un1 + up[1]; S2 = Un2 + up[2]
        w2 = 0.25 * (S0 * S0 + S1 * S1 + S2 * S2)
        if w2 < 1e-24:
            lam = 0.0
        elif first:
            num = inv_prev - (c0 * S0 + c1 * S1 + c2 * S2)
            lam = num / (2.0 * k * k * w2)
        else:
            num = -(v[0] * S0 + v[1] * S1 + v[2] * S2) + inv_prev / (2.0 * k)
            lam = num / (k * w2)
        a0 = V0 + v[0]; a1 = V1 + v[1]; a2 = V2 + v[2]
        x0 = S1 * a2 - S2 * a1
        x1 = S2 * a0 - S0 * a2
        x2 = S0 * a1 - S1 * a0
        N0 = v[0] + 0.5 * k * lam * S0 + q * x0
        N1 = v[1] + 0.5 * k * lam * S1 + q * x1
        N2 = v[2] + 0.5 * k * lam * S2 + q * x2
        d = _absmax3(N0 - V0, N1 - V1, N2 - V2)
        V0 = N0; V1 = N1; V2 = N2
        if d < fp_tol:
            u_out[0] = u[0] + k * V0
            u_out[1] = u[1] + k * V1
            u_out[2] = u[2] + k * V2
            v_out[0] = V0; v_out[1] = V1; v_out[2] = V2
            lam_out[0] = lam
            return it + 1
    return -1


def implicit_step(up, u, v, double k, double sqrtD, double dW,
                  double fp_tol, int fp_max_iter, bint first):
    """Single implicit step.  Returns (U_next, V_next, lam, iterations);
    iterations is -1 if the fixed point did not converge."""
    cdef double[:] up_ = np.ascontiguousarray(up, dtype=np.float64)
    cdef double[:] u_ = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:] v_ = np.ascontiguousarray(v, dtype=np.float64)
    un = np.empty(3)
    vn = np.empty(3)
    cdef double[:] un_ = un
    cdef double[:] vn_ = vn
    cdef double lam = 0.0
    cdef int its
    its = _fp_step(&up_[0], &u_[0], &v_[0], k, sqrtD, dW, fp_tol,
                   fp_max_iter, first, &un_[0], &vn_[0], &lam)
    return un, vn, lam, its


def implicit_path(up0, u0, v0, double k, double sqrtD, double[:] dW,
                  double fp_tol, int fp_max_iter, bint first_general,
                  long[:] snap_idx, double[:, :] snap_u, double[:, :] snap_v,
                  double[:] lam_out=None, long[:] iters_out=None):
    """Run a full path of the implicit scheme.

    Snapshot step indices (0 = initial state) must be sorted; the matching
    states are written into snap_u / snap_v.  Optional per-step multiplier
    and iteration-count traces are filled when provided.  Returns
    (status, max_constraint, max_energy_drift, total_iterations) where
    status is -1 on success or the failing step index.
    """
    cdef int n = dW.shape[0]
    cdef int m = snap_idx.shape[0]
    cdef double up[3]
    cdef double u[3]
    cdef double v[3]
    cdef double un[3]
    cdef double vn[3]
    cdef double lam
    cdef double e0, cmax = 0.0, emax = 0.0, cv, ev
    cdef long total_its = 0
    cdef int i, j, its, si = 0
    cdef bint want_lam = lam_out is not None
    cdef bint want_its = iters_out is not None

    for j in range(3):
        up[j] = up0[j]
        u[j] = u0[j]
        v[j] = v0[j]
    e0 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]

    while si < m and snap_idx[si] == 0:
        for j in range(3):
            snap_u[si, j] = u[j]
            snap_v[si, j] = v[j]
        si += 1

    for i in range(n):
        its = _fp_step(up, u, v, k, sqrtD, dW[i], fp_tol, fp_max_iter,
                       first_general and i == 0, un, vn, &lam)
        if its < 0:
            return i, cmax, emax, total_its
        total_its += its
        if want_lam:
            lam_out[i] = lam
        if want_its:
            iters_out[i] = its
        for j in range(3):
            up[j] = u[j]
            u[j] = un[j]
            v[j] = vn[j]
        cv = fabs(sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]) - 1.0)
        if cv > cmax:
            cmax = cv
        ev = fabs(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - e0)
        if ev > emax:
            emax = ev
        while si < m and snap_idx[si] == i + 1:
            for j in range(3):
                snap_u[si, j] = u[j]
                snap_v[si, j] = v[j]
            si += 1
    return -1, cmax, emax, total_its


def em_path(u0, v0, double k, double D, double sqrtD, double[:] dW,
            long[:] snap_idx, double[:, :] snap_u, double[:, :] snap_v):
    """Explicit Euler-Maruyama reference path for the Ito form.

    Drift (v, -|v|^2 u - (D/2) v), diffusion (0, sqrtD u x v); deliberately
    no constraint enforcement.
    """
    cdef int n = dW.shape[0]
    cdef int m = snap_idx.shape[0]
    cdef double u[3]
    cdef double v[3]
    cdef double nu0, nu1, nu2, v2, dw
    cdef int i, j, si = 0
    for j in range(3):
        u[j] = u0[j]
        v[j] = v0[j]
    while si < m and snap_idx[si] == 0:
        for j in range(3):
            snap_u[si, j] = u[j]
            snap_v[si, j] = v[j]
        si += 1
    for i in range(n):
        dw = dW[i]
        v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        nu0 = v[0] + k * (-v2 * u[0] - 0.5 * D * v[0]) + sqrtD * (u[1] * v[2] - u[2] * v[1]) * dw
        nu1 = v[1] + k * (-v2 * u[1] - 0.5 * D * v[1]) + sqrtD * (u[2] * v[0] - u[0] * v[2]) * dw
        nu2 = v[2] + k * (-v2 * u[2] - 0.5 * D * v[2]) + sqrtD * (u[0] * v[1] - u[1] * v[0]) * dw
        u[0] = u[0] + k * v[0]
        u[1] = u[1] + k * v[1]
        u[2] = u[2] + k * v[2]
        v[0] = nu0; v[1] = nu1; v[2] = nu2
        while si < m and snap_idx[si] == i + 1:
            for j in range(3):
                snap_u[si, j] = u[j]
                snap_v[si, j] = v[j]
            si += 1
    return -1
