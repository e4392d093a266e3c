"""Simulation and Monte Carlo toolkit for dX = A(X-) dZ driven by independent
symmetric alpha-stable coordinates."""

from .engine import (Domain, ExitRecord, PathSample, PathScheme, first_exit,
                     first_hit_before_exit, scaled_field, simulate_path)
from .field import MatrixField, apply_generator, assert_nondegenerate, symbol
from .stable_driver import StableParams, TruncationScheme

__version__ = "0.1.0"

__all__ = ["Domain", "ExitRecord", "MatrixField", "PathSample", "PathScheme", "StableParams",
           "TruncationScheme", "apply_generator", "assert_nondegenerate", "first_exit",
           "first_hit_before_exit", "scaled_field", "simulate_path", "symbol", "__version__"]
