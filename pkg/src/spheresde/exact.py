"""Closed-form constant-control solutions: circles on the sphere.

With a constant control a, the controlled geodesic equation
w'' = -|w'|^2 w + a w x w' is solved exactly by a circle traversed at
constant speed r with angular frequency b = sqrt(r^2 + a^2).  These
solutions are the oracle for the time stepper and the exact propagator of
the reachability planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BundleState, DegenerateInputError, norm, vec3


@dataclass(frozen=True)
class Frame:
    """Orthonormal, positively oriented frame attached to a constant-control
    solution, together with its angular frequency b = sqrt(r^2 + a^2)."""

    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    b: float


@dataclass(frozen=True)
class OrientedCircle:
    """A non-degenerate circle on the sphere with a length-r tangent field.

    The circle is (center + span{p1, p2}) intersected with the sphere; its
    radius is theta = sqrt(1 - |center|^2) > 0.  The field at z on the
    circle is sign * (r/theta) * (-<z,p1> p2 + <z,p2> p1).
    """

    center: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    r: float
    sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "p1", vec3(self.p1))
        object.__setattr__(self, "p2", vec3(self.p2))
        if norm(self.center) >= 1.0:
            raise ValueError("circle center must satisfy |center| < 1")
        if self.r <= 0.0:
            raise ValueError("field speed r must be positive")
        if self.sign not in (-1, 1):
            raise ValueError("orientation sign must be +1 or -1")

    @property
    def theta(self) -> float:
        """Circle radius."""
        return math.sqrt(max(0.0, 1.0 - float(self.center @ self.center)))

    @property
    def diameter(self) -> float:
        return 2.0 * self.theta

    def point(self, phi: float) -> np.ndarray:
        """Point on the circle at in-plane angle phi."""
        return self.center + self.theta * (
            math.cos(phi) * self.p1 + math.sin(phi) * self.p2
        )

    def distance_to(self, p) -> float:
        """Euclidean distance from an ambient point to the circle."""
        p = vec3(p)
        d = p - self.center
        a = float(d @ self.p1)
        b = float(d @ self.p2)
        in_plane = math.hypot(a, b)
        h = d - a * self.p1 - b * self.p2
        return math.hypot(norm(h), in_plane - self.theta)


def solution_frame(x: BundleState, a: float) -> Frame:
    """Frame (E1, E2, E3) and frequency b of the constant-control solution
    through x = (p, xi)."""
    r = x.speed
    if r <= 0.0:
        raise DegenerateInputError("constant-control solution requires |v| > 0")
    p, xi = x.u, x.v
    b = math.sqrt(r * r + a * a)
    pxxi = np.cross(p, xi)
    e1 = (a / b) * p + (1.0 / b) * pxxi
    e2 = (r / b) * p - (a / (r * b)) * pxxi
    e3 = xi / r
    return Frame(e1, e2, e3, b)


def constant_control_state(x: BundleState, a: float, t: float) -> BundleState:
    """Exact state at time t of the constant-control solution through x.

    w(t) = (a/b) E1 + (r/b) E2 cos(bt) + (r/b) E3 sin(bt); the velocity is
    the analytic derivative -r E2 sin(bt) + r E3 cos(bt).
    """
    r = x.speed
    fr = solution_frame(x, a)
    b = fr.b
    c, s = math.cos(b * t), math.sin(b * t)
    u = (a / b) * fr.e1 + (r / b) * (c * fr.e2 + s * fr.e3)
    v = r * (-s * fr.e2 + c * fr.e3)
    return BundleState(u, v)


def orbit_circle(x: BundleState, a: float) -> OrientedCircle:
    """Oriented circle traced by the constant-control solution through x.

    The circle has center (a/b) E1 and diameter 2r/b; its tangent field
    evaluated along the solution equals the solution's velocity.
    """
    r = x.speed
    fr = solution_frame(x, a)
    # Basis order (E3, E2) makes the +1-oriented generic field coincide with
    # the solution's velocity field -b<z,E3> E2 + b<z,E2> E3.
    return OrientedCircle(
        center=(a / fr.b) * fr.e1, p1=fr.e3, p2=fr.e2, r=r, sign=1
    )


def circle_field(c: OrientedCircle, z, tol: float = 1e-9) -> np.ndarray:
    """Length-r tangent field of an oriented circle, evaluated at z on it."""
    z = vec3(z)
    if c.distance_to(z) > tol:
        raise ValueError(f"point is {c.distance_to(z):.3g} away from the circle")
    scale = c.sign * c.r / c.theta
    return scale * (-float(z @ c.p1) * c.p2 + float(z @ c.p2) * c.p1)
