"""Numerical toolkit for the cscK equation with B-field on toric manifolds."""

__version__ = "0.1.0"

from .errors import ToricBFieldError
from .polytope import DelzantPolytope, build_polytope, measures, mixed_volume, SIGMA_CALIBRATION
from .toric_classes import AngleData, ToricClass, intersection_number, invariants_bundle

__all__ = [
    "AngleData", "DelzantPolytope", "SIGMA_CALIBRATION", "ToricBFieldError", "ToricClass",
    "build_polytope", "intersection_number", "invariants_bundle", "measures", "mixed_volume",
]
