"""Simulation and verification toolkit for the damped stochastic geodesic
equation on the tangent bundle of the unit sphere."""

from .backend import BACKEND_NAME, HAVE_COMPILED

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "HAVE_COMPILED", "__version__"]
