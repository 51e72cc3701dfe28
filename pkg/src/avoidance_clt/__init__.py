"""Avoidance functionals of Poisson and binomial point processes.

Simulation of the functionals, closed-form add-one-point and inverse
Ornstein-Uhlenbeck differences, Monte Carlo evaluation of the normal
approximation constants, and exact distances to the standard normal.
"""

from __future__ import annotations

from .errors import (AvoidanceError, ContractViolationError, DegenerateVarianceError, EmptyPatternError,
                     InvalidArgumentError, OutOfRegimeError, OutOfScopeError)
from .functionals import ModelSpec, QuadratureSpec, replicate_functional
from .geometry import Ball, MarkMeasure, ShapeFamily, Window
from .mc import McEstimate
from .ppp import PointPattern, sample_binomial, sample_homogeneous, sample_thinned
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "AvoidanceError", "Ball", "ContractViolationError", "DegenerateVarianceError", "EmptyPatternError",
    "InvalidArgumentError", "MarkMeasure", "McEstimate", "ModelSpec", "OutOfRegimeError", "OutOfScopeError",
    "PointPattern", "QuadratureSpec", "RngStream", "ShapeFamily", "Window", "replicate_functional",
    "sample_binomial", "sample_homogeneous", "sample_thinned",
]
