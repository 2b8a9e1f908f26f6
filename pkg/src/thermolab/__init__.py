"""Numerical laboratory for Gaussian thermostats on the Bolza surface."""

from ._backend import COMPILED

__version__ = "0.1.0"

__all__ = ["COMPILED", "__version__"]
