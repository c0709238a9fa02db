"""Tests for the closed-form constant-control solutions."""

import math

import numpy as np
import pytest

from spheresde.exact import (
    OrientedCircle,
    circle_field,
    constant_control_state,
    orbit_circle,
    solution_frame,
)
from spheresde.geometry import BundleState, DegenerateInputError, \
    uniform_bundle_sample


def random_cases(n, seed=0, r_range=(0.3, 2.5), a_range=(-3.0, 3.0)):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n):
        r = float(rng.uniform(*r_range))
        u, v = uniform_bundle_sample(1, r, rng)
        a = float(rng.uniform(*a_range))
        cases.append((BundleState(u[0], v[0]), a, r))
    return cases


def second_derivative(x, a, t):
    """Analytic w'' of the closed-form solution."""
    fr = solution_frame(x, a)
    b, r = fr.b, x.speed
    return r * b * (-math.cos(b * t) * fr.e2 - math.sin(b * t) * fr.e3)


class TestFrame:
    def test_orthonormal_positively_oriented(self):
        for x, a, r in random_cases(200, seed=1):
            fr = solution_frame(x, a)
            M = np.stack([fr.e1, fr.e2, fr.e3])
            assert np.abs(M @ M.T - np.eye(3)).max() < 1e-12
            assert np.linalg.det(M) > 0.99
            assert abs(fr.b - math.sqrt(r * r + a * a)) < 1e-14

    def test_zero_speed_raises(self):
        z = BundleState([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        with pytest.raises(DegenerateInputError):
            solution_frame(z, 1.0)


class TestConstantControlState:
    def test_great_circle(self):
        # a = 0, r = 1: w(t) = p cos t + xi sin t
        z = BundleState([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
        for t in (0.3, 1.0, 2.5):
            s = constant_control_state(z, 0.0, t)
            expect = math.cos(t) * z.u + math.sin(t) * z.v
            assert np.abs(s.u - expect).max() < 1e-14
            assert np.abs(s.v + math.sin(t) * z.u - math.cos(t) * z.v).max() < 1e-14

    def test_initial_condition(self):
        for x, a, r in random_cases(100, seed=2):
            s = constant_control_state(x, a, 0.0)
            assert np.abs(s.u - x.u).max() < 1e-14
            assert np.abs(s.v - x.v).max() < 1e-14

    def test_stays_on_bundle(self):
        for x, a, r in random_cases(50, seed=3):
            for t in np.linspace(0.0, 3.0, 7):
                s = constant_control_state(x, a, float(t))
                assert abs(np.linalg.norm(s.u) - 1.0) < 1e-12
                assert abs(s.speed - r) < 1e-12
                assert abs(float(s.u @ s.v)) < 1e-12

    def test_periodicity(self):
        for x, a, r in random_cases(100, seed=4):
            b = math.sqrt(r * r + a * a)
            s = constant_control_state(x, a, 2.0 * math.pi / b)
            assert np.abs(s.u - x.u).max() < 1e-12
            assert np.abs(s.v - x.v).max() < 1e-12

    def test_ode_residual(self):
        # w'' = -|w'|^2 w + a w x w' with analytic second derivative
        for x, a, r in random_cases(100, seed=5):
            for t in np.linspace(0.0, 4.0, 100):
                s = constant_control_state(x, a, float(t))
                acc = second_derivative(x, a, float(t))
                res = acc + r * r * s.u - a * np.cross(s.u, s.v)
                assert np.abs(res).max() < 1e-10

    def test_group_property(self):
        for x, a, r in random_cases(50, seed=6):
            s1 = constant_control_state(x, a, 0.7)
            s2 = constant_control_state(s1, a, 1.1)
            direct = constant_control_state(x, a, 1.8)
            assert np.abs(s2.u - direct.u).max() < 1e-11
            assert np.abs(s2.v - direct.v).max() < 1e-11


class TestOrbitCircle:
    def test_great_circle_orbit(self):
        z = BundleState([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
        c = orbit_circle(z, 0.0)
        assert np.abs(c.center).max() < 1e-15
        assert abs(c.diameter - 2.0) < 1e-14

    def test_diameter_formula(self):
        for x, a, r in random_cases(100, seed=7):
            b = math.sqrt(r * r + a * a)
            c = orbit_circle(x, a)
            assert abs(c.diameter - 2.0 * r / b) < 1e-12

    def test_contains_base_point_and_field(self):
        for x, a, r in random_cases(100, seed=8):
            c = orbit_circle(x, a)
            assert c.distance_to(x.u) < 1e-12
            assert np.abs(circle_field(c, x.u) - x.v).max() < 1e-11

    def test_field_along_solution(self):
        for x, a, r in random_cases(30, seed=9):
            c = orbit_circle(x, a)
            for t in np.linspace(0.0, 2.0, 8):
                s = constant_control_state(x, a, float(t))
                assert np.abs(circle_field(c, s.u, tol=1e-8) - s.v).max() < 1e-10


class TestOrientedCircle:
    def test_validation(self):
        with pytest.raises(ValueError):
            OrientedCircle([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], 1.0)
        with pytest.raises(ValueError):
            OrientedCircle([0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], -1.0)
        with pytest.raises(ValueError):
            OrientedCircle([0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
                           1.0, sign=2)

    def test_equator_field_and_orientation(self):
        # sign +1 runs clockwise seen from the plane normal p1 x p2
        eq = OrientedCircle([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 1.0)
        y = circle_field(eq, [1.0, 0.0, 0.0])
        assert np.allclose(y, [0.0, -1.0, 0.0])
        flipped = OrientedCircle(eq.center, eq.p1, eq.p2, eq.r, sign=-1)
        assert np.allclose(circle_field(flipped, [1.0, 0.0, 0.0]), -y)

    def test_field_length_and_tangency(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            center = rng.uniform(-0.4, 0.4, 3)
            n = rng.standard_normal(3)
            n /= np.linalg.norm(n)
            center = float(rng.uniform(0.0, 0.8)) * n
            p1 = np.cross(n, [1.0, 0.3, -0.2])
            p1 /= np.linalg.norm(p1)
            p2 = np.cross(n, p1)
            r = float(rng.uniform(0.5, 2.0))
            c = OrientedCircle(center, p1, p2, r)
            z = c.point(float(rng.uniform(0.0, 2.0 * math.pi)))
            y = circle_field(c, z, tol=1e-8)
            assert abs(np.linalg.norm(y) - r) < 1e-12
            assert abs(float(y @ z)) < 1e-12
            assert abs(float(y @ n)) < 1e-12

    def test_off_circle_rejected(self):
        eq = OrientedCircle([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 1.0)
        with pytest.raises(ValueError):
            circle_field(eq, [0.0, 0.0, 1.0])

    def test_distance_to(self):
        eq = OrientedCircle([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 1.0)
        assert eq.distance_to([1.0, 0.0, 0.0]) < 1e-15
        assert abs(eq.distance_to([0.0, 0.0, 1.0]) - math.sqrt(2.0)) < 1e-12
