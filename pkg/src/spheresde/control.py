"""Reachability planner on the constant-speed bundles.

Any state with speed r can be steered to any other state of the same speed
in any time T >= 2*pi/r using at most four constant-control segments:

  1. drift briefly with a = 0 so the current position differs from the
     target position (skipped when they already differ),
  2. switch to a large control whose tiny orbit K2 stays away from the
     target position,
  3. jump circles: ride the unique circle through a point z of K2 and the
     target position whose length-r field matches K2's field at z and the
     target velocity at the target position,
  4. wait on the target orbit for a whole number of periods to burn the
     remaining time exactly.

Planning is exact: segments are propagated with the closed-form
constant-control solutions, so endpoint errors are pure roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exact import OrientedCircle, circle_field, constant_control_state, orbit_circle
from .geometry import EPS_CONSTRAINT, BundleState, DegenerateInputError, norm, vec3

MIN_CLEARANCE = 1e-6   # connect_circles precondition on dist(p, K)
SEPARATION = 5e-3      # required position separation entering phase 2


class InfeasibleTimeError(ValueError):
    """The horizon is below the reachability threshold 2*pi/r."""


class PlanningError(RuntimeError):
    """The geometric construction failed (root finder or inconsistency)."""


@dataclass(frozen=True)
class ControlPlan:
    """Piecewise-constant control: segments of (control value, duration)."""

    segments: tuple
    total_time: float

    def __post_init__(self):
        segs = tuple((float(a), float(d)) for a, d in self.segments)
        object.__setattr__(self, "segments", segs)
        for a, d in segs:
            if d <= 0.0:
                raise ValueError("segment durations must be positive")
        if segs and abs(sum(d for _, d in segs) - self.total_time) > 1e-9 * (
            1.0 + abs(self.total_time)
        ):
            raise ValueError("segment durations must sum to total_time")

    def to_dict(self) -> dict:
        return {
            "segments": [{"a": a, "duration": d} for a, d in self.segments],
            "total_time": self.total_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ControlPlan":
        return cls(
            segments=tuple((s["a"], s["duration"]) for s in d["segments"]),
            total_time=float(d["total_time"]),
        )


@dataclass(frozen=True)
class ReachabilityQuery:
    """Steer `start` to `target` (same speed r) in time exactly T."""

    start: BundleState
    target: BundleState
    T: float

    def __post_init__(self):
        self.start.validate()
        self.target.validate()
        r = self.start.speed
        if r <= 0.0:
            raise DegenerateInputError(
                "zero-speed states are fixed points; nothing to plan"
            )
        if abs(self.target.speed - r) > EPS_CONSTRAINT:
            raise ValueError(
                f"start and target speeds differ: {r} vs {self.target.speed}"
            )
        if self.T < 2.0 * math.pi / r - 1e-12:
            raise InfeasibleTimeError(
                f"T = {self.T} is below the reachability threshold "
                f"2*pi/r = {2.0 * math.pi / r}"
            )

    @property
    def r(self) -> float:
        return self.start.speed


def _circle_angle(c: OrientedCircle, x) -> float:
    d = vec3(x) - c.center
    return math.atan2(float(d @ c.p2), float(d @ c.p1))


def time_along(c: OrientedCircle, x_from, x_to) -> float:
    """Travel time from x_from to x_to along the circle's field.

    The field moves points at in-plane angular rate r/theta, in the
    direction of decreasing angle for sign +1.
    """
    dphi = _circle_angle(c, x_from) - _circle_angle(c, x_to)
    if c.sign < 0:
        dphi = -dphi
    dphi = dphi % (2.0 * math.pi)
    return dphi * c.theta / c.r


def _candidate_circle(K: OrientedCircle, z, p):
    """Circle through z and p whose field agrees with K's field at z.

    Returns (circle, field value at p).  This is the planner's core
    construction: remove from p - z the component along the field Y_z, use
    the remainder to span the circle plane together with Y_z, and read off
    the center as the out-of-plane part of p.
    """
    z = vec3(z)
    Y = circle_field(K, z, tol=1e-7)
    r = K.r
    pz_vec = vec3(p) - z
    R = r * r * pz_vec - float(pz_vec @ Y) * Y
    Rn = norm(R)
    if Rn < 1e-14:
        raise PlanningError("degenerate construction: p - z aligned with the field")
    V = R / Rn
    q = float(vec3(p) @ V) * V + (float(vec3(p) @ Y) / (r * r)) * Y
    center = vec3(p) - q
    theta = math.sqrt(max(0.0, 1.0 - float(center @ center)))
    if theta < 1e-12:
        raise PlanningError("degenerate candidate circle (zero radius)")
    circle = OrientedCircle(center=center, p1=V, p2=Y / r, r=r, sign=1)
    field_at_p = (1.0 / theta) * (float(vec3(p) @ Y) * V - float(vec3(p) @ V) * Y)
    return circle, field_at_p


def _tangent_angle(p, a, b) -> float:
    """Signed angle from a to b in the tangent plane at p, in (-pi, pi]."""
    an = a / norm(a)
    bn = b / norm(b)
    return math.atan2(float(vec3(p) @ np.cross(an, bn)), float(an @ bn))


def connect_circles(K: OrientedCircle, p, xi, n_scan: int = 360):
    """Find z on K and the circle through z and p matching both fields.

    The returned circle's field equals K's field at z and equals xi at p.
    p must keep a distance of at least 1e-6 from K; xi must be tangent at
    p with |xi| = K.r.
    """
    p = vec3(p)
    xi = vec3(xi)
    if abs(norm(p) - 1.0) > EPS_CONSTRAINT:
        raise ValueError("p must lie on the unit sphere")
    if abs(float(p @ xi)) > 1e-9 or abs(norm(xi) - K.r) > 1e-9:
        raise ValueError("xi must be tangent at p with |xi| = r")
    if K.distance_to(p) < MIN_CLEARANCE:
        raise ValueError(
            f"p is {K.distance_to(p):.3g} from K; need at least {MIN_CLEARANCE}"
        )

    def mismatch(phi):
        z = K.point(phi)
        _, field_at_p = _candidate_circle(K, z, p)
        return _tangent_angle(p, field_at_p, xi)

    phis = np.linspace(0.0, 2.0 * math.pi, n_scan, endpoint=False)
    vals = [mismatch(ph) for ph in phis]
    bracket = None
    for i in range(n_scan):
        j = (i + 1) % n_scan
        a, b = vals[i], vals[j]
        if a == 0.0:
            bracket = (phis[i], phis[i])
            break
        # accept a sign change only when it is not a +-pi wraparound
        if a * b < 0.0 and abs(a) + abs(b) < math.pi:
            lo = phis[i]
            hi = phis[j] if j != 0 else 2.0 * math.pi
            bracket = (lo, hi)
            break
    if bracket is None:
        raise PlanningError("no sign change found while scanning the circle")

    lo, hi = bracket
    if lo == hi:
        phi_star = lo
    else:
        flo = mismatch(lo)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = mismatch(mid)
            if fm == 0.0 or hi - lo < 1e-12:
                lo = hi = mid
                break
            if flo * fm < 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
        phi_star = 0.5 * (lo + hi)

    z = K.point(phi_star)
    circle, field_at_p = _candidate_circle(K, z, p)
    if norm(field_at_p - xi) > 1e-8:
        raise PlanningError(
            f"endpoint field residual {norm(field_at_p - xi):.3g} after root find"
        )
    return z, circle


def recover_control(z: BundleState, circle: OrientedCircle) -> float:
    """Constant control whose orbit through z traces the given circle.

    From the orbit geometry the rotation axis is (a/b) p + (1/b) p x xi, so
    a = r^2 <c, p> / <c, p x xi> with c the circle center; a great circle
    (c ~ 0) gives a = 0.
    """
    r = z.speed
    if r <= 0.0:
        raise DegenerateInputError("recover_control requires |v| > 0")
    p, xi = z.u, z.v
    c = circle.center
    denom = float(c @ np.cross(p, xi))
    a = 0.0 if abs(denom) < 1e-12 else r * r * float(c @ p) / denom
    check = orbit_circle(z, a)
    if norm(check.center - circle.center) > 1e-9:
        raise PlanningError(
            "circle is not the orbit of any constant control through z "
            f"(axis mismatch {norm(check.center - circle.center):.3g})"
        )
    return a


def _wait_control(t4: float, r: float) -> float:
    """Control whose orbit period divides t4 (smallest magnitude)."""
    m = max(1, math.ceil(t4 * r / (2.0 * math.pi) - 1e-9))
    b4 = 2.0 * math.pi * m / t4
    a2 = b4 * b4 - r * r
    if a2 < 1e-12 * b4 * b4:  # snap roundoff-level controls to drift
        return 0.0
    return math.sqrt(a2)


def plan_control(q: ReachabilityQuery) -> ControlPlan:
    """Plan at most four constant-control segments steering start to target
    at time exactly q.T."""
    r = q.r
    start, target = q.start, q.target
    p3, xi3 = target.u, target.v

    if norm(start.u - p3) < 1e-9 and norm(start.v - xi3) < 1e-9:
        return ControlPlan(segments=((_wait_control(q.T, r), q.T),), total_time=q.T)

    slack = q.T - 2.0 * math.pi / r
    segments = []

    # phase 1: make sure the position differs from the target position
    state = start
    tau1 = 0.0
    if norm(start.u - p3) < SEPARATION:
        tau1 = min(1e-3, q.T / 100.0, 0.05 * slack if slack > 0 else 1e-3) / r
        for _ in range(60):
            cand = constant_control_state(start, 0.0, tau1)
            if norm(cand.u - p3) >= SEPARATION:
                break
            tau1 *= 2.0
        else:
            raise PlanningError("could not separate positions in phase 1")
        state = constant_control_state(start, 0.0, tau1)
        segments.append((0.0, tau1))

    d = norm(state.u - p3)

    # phase 2: shrink the orbit so it misses the target position and has a
    # short period (it must fit into the time budget before the long arc)
    budget = 0.45 * slack if slack > 0 else 0.0
    b2 = 4.0 * r / d
    if budget > 0.0:
        b2 = max(b2, 2.0 * math.pi / budget)
    b2 = max(b2, r)
    a2 = math.sqrt(max(0.0, b2 * b2 - r * r))
    K2 = orbit_circle(state, a2)

    z_star, bridge = connect_circles(K2, p3, xi3)
    t2 = time_along(K2, state.u, z_star)
    if t2 > 0.0:
        segments.append((a2, t2))

    # phase 3: ride the bridge circle from z* to the target position
    y_at_z = circle_field(K2, z_star, tol=1e-7)
    state_z = BundleState(z_star, y_at_z)
    a3 = recover_control(state_z, bridge)
    t3 = time_along(bridge, z_star, p3)
    if t3 > 0.0:
        segments.append((a3, t3))

    # phase 4: wait on the target orbit for whole periods
    t4 = q.T - tau1 - t2 - t3
    if t4 < -1e-9:
        raise PlanningError(
            f"phases overran the horizon by {-t4:.3g}; T too close to 2*pi/r"
        )
    if t4 > 1e-12:
        segments.append((_wait_control(t4, r), t4))
    else:
        # absorb roundoff so durations sum to T exactly
        a_last, d_last = segments[-1]
        segments[-1] = (a_last, d_last + t4)

    return ControlPlan(segments=tuple(segments), total_time=q.T)


def execute_plan(x0: BundleState, plan: ControlPlan, samples_per_segment: int = 0):
    """Propagate a plan exactly; returns [(time, BundleState), ...] at
    segment boundaries plus optional interior samples."""
    out = [(0.0, x0)]
    state = x0
    t = 0.0
    for a, dur in plan.segments:
        for s in range(1, samples_per_segment + 1):
            ts = dur * s / (samples_per_segment + 1)
            out.append((t + ts, constant_control_state(state, a, ts)))
        state = constant_control_state(state, a, dur)
        t += dur
        out.append((t, state))
    return out
