"""Generalized Kottler-de Sitter-Schwarzschild initial data and certified
scalar-curvature deformations."""

from .cross_geometry import CrossSpace, Family, make_cross, parse_cross
from .gkdss import GkdssSpace, make_gkdss, mass_bound, solve_horizons

__all__ = [
    "CrossSpace",
    "Family",
    "GkdssSpace",
    "make_cross",
    "make_gkdss",
    "mass_bound",
    "parse_cross",
    "solve_horizons",
]

__version__ = "0.1.0"
