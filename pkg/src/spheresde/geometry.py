"""Core geometry of the unit-sphere tangent bundle.

States are pairs (u, v) with u on the unit sphere and v tangent at u.
This module provides the drift and diffusion vector fields of the damped
stochastic geodesic equation, their Lie brackets (both in closed form and
via analytic Jacobians of the ambient polynomial extensions), and the
6 x 8 partition of the unit-speed sub-bundle used by the ergodicity
diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_CONSTRAINT = 1e-9

# Sphere segment centers, in the fixed index order 1..6.
SEGMENT_CENTERS = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)


class DegenerateInputError(ValueError):
    """Input lies in a degenerate set where the operation is undefined."""


class ConstraintError(ValueError):
    """State violates the bundle constraints beyond tolerance."""


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a float 3-vector from components or any length-3 sequence."""
    if y is None:
        a = np.asarray(x, dtype=float)
    else:
        a = np.array([x, y, z], dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector components must be finite")
    return a


def norm(a) -> float:
    return float(np.linalg.norm(a))


@dataclass(frozen=True)
class BundleState:
    """A point z = (u, v) of the tangent bundle: |u| = 1 and u . v = 0."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", vec3(self.u))
        object.__setattr__(self, "v", vec3(self.v))

    @property
    def speed(self) -> float:
        return norm(self.v)

    def validate(self, eps: float = EPS_CONSTRAINT) -> None:
        if abs(norm(self.u) - 1.0) > eps:
            raise ConstraintError(f"|u| = {norm(self.u)} is not 1 within {eps}")
        if abs(float(self.u @ self.v)) > eps:
            raise ConstraintError(f"<u,v> = {self.u @ self.v} exceeds {eps}")

    def require_speed(self, r: float, eps: float = EPS_CONSTRAINT) -> None:
        if abs(self.speed - r) > eps:
            raise ConstraintError(f"|v| = {self.speed} is not {r} within {eps}")

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])


@dataclass(frozen=True)
class BundleCellIndex:
    """Cell (i, j) of the 6 x 8 partition of the unit-speed bundle."""

    i: int  # sphere segment, 1..6
    j: int  # tangent sector, 1..8

    def __post_init__(self):
        if not 1 <= self.i <= 6:
            raise ValueError(f"segment index {self.i} out of range 1..6")
        if not 1 <= self.j <= 8:
            raise ValueError(f"sector index {self.j} out of range 1..8")

    @property
    def flat(self) -> int:
        """Row-major flat index in 0..47."""
        return (self.i - 1) * 8 + (self.j - 1)


def project_to_bundle(u_raw, v_raw) -> BundleState:
    """Normalize u and remove the normal component of v.

    Raises DegenerateInputError when u_raw is the zero vector.
    """
    u_raw = vec3(u_raw)
    v_raw = vec3(v_raw)
    n = norm(u_raw)
    if n == 0.0:
        raise DegenerateInputError("cannot project: |u_raw| = 0")
    u = u_raw / n
    v = v_raw - float(v_raw @ u) * u
    return BundleState(u, v)


# ---------------------------------------------------------------------------
# Vector fields on the bundle (ambient polynomial extensions on R^6)
# ---------------------------------------------------------------------------

def drift_f(z: BundleState):
    """Geodesic drift: f(u, v) = (v, -|v|^2 u)."""
    return z.v.copy(), -float(z.v @ z.v) * z.u


def diffusion_g(z: BundleState):
    """Rotational diffusion: g(u, v) = (0, u x v)."""
    return np.zeros(3), np.cross(z.u, z.v)


def bracket_gf(z: BundleState):
    """Closed form of the bracket of g and f: (u x v, 0)."""
    return np.cross(z.u, z.v), np.zeros(3)


def ito_correction(z: BundleState, D: float):
    """Stratonovich-to-Ito drift correction (D/2) g(g(z)).

    Equals (0, -(D/2) v) on the bundle since u x (u x v) = -v there.
    """
    if D < 0:
        raise ValueError("noise intensity D must be nonnegative")
    u, v = z.u, z.v
    return np.zeros(3), 0.5 * D * np.cross(u, np.cross(u, v))


def _jac_f(z: BundleState, w):
    """Directional derivative of f at z in direction w = (wu, wv)."""
    wu, wv = w
    v = z.v
    return wv.copy(), -float(v @ v) * wu - 2.0 * float(v @ wv) * z.u


def _jac_g(z: BundleState, w):
    wu, wv = w
    return np.zeros(3), np.cross(wu, z.v) + np.cross(z.u, wv)


def _jac_gf(z: BundleState, w):
    wu, wv = w
    return np.cross(wu, z.v) + np.cross(z.u, wv), np.zeros(3)


_FIELDS = {
    "f": (drift_f, _jac_f),
    "g": (diffusion_g, _jac_g),
    "gf": (bracket_gf, _jac_gf),
}


def jacobi_bracket(X: str, Y: str, z: BundleState):
    """Bracket [X, Y](z) = dY(z)[X(z)] - dX(z)[Y(z)].

    X, Y name one of the polynomial fields 'f', 'g' or 'gf' (the closed-form
    bracket of g and f); derivatives are the analytic ambient Jacobians, so
    the result is exact up to rounding.
    """
    try:
        x_val, x_jac = _FIELDS[X]
        y_val, y_jac = _FIELDS[Y]
    except KeyError as exc:
        raise ValueError(f"unknown field id {exc}; expected one of 'f', 'g', 'gf'")
    dy = y_jac(z, x_val(z))
    dx = x_jac(z, y_val(z))
    return dy[0] - dx[0], dy[1] - dx[1]


# ---------------------------------------------------------------------------
# The 6 x 8 partition of the unit-speed bundle
# ---------------------------------------------------------------------------

def _sector_frames():
    """In-plane reference bases for the six tangent planes.

    For segment i the reference direction is the projection onto the tangent
    plane of the lowest-index center not parallel to center i; the second
    axis completes a right-handed frame with the center as normal.  Sector j
    covers in-plane angles [ (j-1) pi/4, j pi/4 ).
    """
    e_ref = np.empty((6, 3))
    e_perp = np.empty((6, 3))
    for i in range(6):
        c = SEGMENT_CENTERS[i]
        for k in range(6):
            cand = SEGMENT_CENTERS[k]
            if abs(float(cand @ c)) < 0.5:
                e_ref[i] = cand
                break
        e_perp[i] = np.cross(c, e_ref[i])
    return e_ref, e_perp


_SECTOR_REF, _SECTOR_PERP = _sector_frames()


def partition_index_many(u: np.ndarray, v: np.ndarray):
    """Vectorized partition lookup for unit-speed bundle states.

    Parameters are (N, 3) arrays.  Returns (seg, sec, degenerate): integer
    arrays of 1-based segment/sector indices and a boolean mask marking
    states whose projected velocity is shorter than 1e-12 (those receive
    index 0 in both outputs).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    d2 = ((u[:, None, :] - SEGMENT_CENTERS[None, :, :]) ** 2).sum(axis=2)
    seg0 = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties

    centers = SEGMENT_CENTERS[seg0]
    vp = v - (v * centers).sum(axis=1)[:, None] * centers
    vp_len = np.sqrt((vp * vp).sum(axis=1))
    degenerate = vp_len < 1e-12

    a = (vp * _SECTOR_REF[seg0]).sum(axis=1)
    b = (vp * _SECTOR_PERP[seg0]).sum(axis=1)
    phi = np.arctan2(b, a)
    phi = np.where(phi < 0.0, phi + 2.0 * np.pi, phi)
    sec0 = np.floor(phi / (0.25 * np.pi)).astype(np.int64)
    # Exact boundary multiples belong to the lower-index sector; phi = 0
    # belongs to sector 1.
    on_boundary = (phi > 0.0) & (np.mod(phi, 0.25 * np.pi) == 0.0)
    sec0 = np.where(on_boundary, sec0 - 1, sec0)
    sec0 = np.clip(sec0, 0, 7)

    seg = np.where(degenerate, -1, seg0) + 1
    sec = np.where(degenerate, -1, sec0) + 1
    return seg, sec, degenerate


def partition_index(z: BundleState, eps: float = EPS_CONSTRAINT) -> BundleCellIndex:
    """Cell of the 6 x 8 partition containing a unit-speed state."""
    z.validate(eps)
    z.require_speed(1.0, eps)
    seg, sec, degenerate = partition_index_many(z.u[None, :], z.v[None, :])
    if degenerate[0]:
        raise DegenerateInputError(
            "velocity projects to (near) zero on the segment tangent plane"
        )
    return BundleCellIndex(int(seg[0]), int(sec[0]))


def uniform_bundle_sample(n: int, r: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw n states uniformly from the speed-r bundle (oracle sampler).

    Positions are uniform on the sphere; velocities are uniform on the
    tangent circle of radius r.  Returns (u, v) as (n, 3) arrays.
    """
    u = rng.standard_normal((n, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    # tangent frame: orthonormalize a helper axis against u
    helper = np.zeros((n, 3))
    helper[:, 0] = 1.0
    mask = np.abs(u[:, 0]) > 0.9
    helper[mask] = [0.0, 1.0, 0.0]
    t1 = np.cross(u, helper)
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(u, t1)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    v = r * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)
    return u, v
