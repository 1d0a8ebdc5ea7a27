"""Compact rank one symmetric spaces (CROSS) and their radial calculus.

Every CROSS carries the Fubini-Study metric rescaled by ``1/beta`` so that
``Ric_h = (d - 1) h``.  Radial functions are written as polynomials in
``f = cos(sqrt(beta) s)``, ``s`` the distance from a pole; on those the
Laplacian acts by

    beta^{-1} Delta_h g(f) = (1 - f^2) g''(f) + (q/f - e f) g'(f),   e = d + q.

Polynomials are dense coefficient lists indexed by power, entries
:class:`fractions.Fraction` so the recurrences stay exact.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import DimensionError, DomainError, NumericalError

__all__ = [
    "CrossSpace",
    "Family",
    "eigenvalue",
    "make_cross",
    "moment",
    "parse_cross",
    "poly_eval",
    "quadrature_moment",
    "radial_density",
    "radial_laplacian_poly",
]


class Family(enum.Enum):
    SPHERE = "sphere"
    REAL_PROJECTIVE = "rp"
    COMPLEX_PROJECTIVE = "cp"
    QUATERNIONIC_PROJECTIVE = "hp"
    CAYLEY_PLANE = "op"


_FIBER_DIM = {
    Family.SPHERE: 0,
    Family.REAL_PROJECTIVE: 0,
    Family.COMPLEX_PROJECTIVE: 1,
    Family.QUATERNIONIC_PROJECTIVE: 3,
    Family.CAYLEY_PLANE: 7,
}


@dataclass(frozen=True)
class CrossSpace:
    """A CROSS of dimension ``d`` with totally geodesic fibers ``S^q``."""

    family: Family
    d: int
    q: int
    beta: Fraction
    e: int
    f_range: tuple

    @property
    def is_sphere(self):
        return self.family is Family.SPHERE

    @property
    def diameter(self):
        if self.is_sphere:
            return math.pi
        return math.pi / (2.0 * math.sqrt(float(self.beta)))

    @property
    def label(self):
        if self.family is Family.SPHERE:
            return f"S{self.d}"
        step = {Family.REAL_PROJECTIVE: 1, Family.COMPLEX_PROJECTIVE: 2,
                Family.QUATERNIONIC_PROJECTIVE: 4, Family.CAYLEY_PLANE: 8}[self.family]
        return f"{self.family.value.upper()}{self.d // step}"


def make_cross(family, d):
    """Build the catalog entry for ``(family, d)``.

    Raises
    ------
    DimensionError
        If the pair is not an admissible CROSS (e.g. odd-dimensional complex
        projective space, or a Cayley plane with ``d != 16``).
    """
    family = Family(family)
    d = int(d)
    if d < 2:
        raise DimensionError(f"d = {d}: cross-section dimension must be >= 2")
    if family is Family.COMPLEX_PROJECTIVE and (d % 2 or d < 4):
        raise DimensionError(f"CP^l needs d = 2l >= 4 (even), got d = {d}")
    if family is Family.QUATERNIONIC_PROJECTIVE and (d % 4 or d < 8):
        raise DimensionError(f"HP^l needs d = 4l >= 8, got d = {d}")
    if family is Family.CAYLEY_PLANE and d != 16:
        raise DimensionError(f"the Cayley plane has d = 16, got d = {d}")
    q = _FIBER_DIM[family]
    beta = Fraction(d - 1, 3 * q + d - 1)
    f_range = (-1.0, 1.0) if family is Family.SPHERE else (0.0, 1.0)
    return CrossSpace(family=family, d=d, q=q, beta=beta, e=d + q, f_range=f_range)


_SPEC_RE = re.compile(r"^(s|sphere|rp|cp|hp|op)(?::?(\d+))?$")


def parse_cross(spec, d=None):
    """Parse a CLI cross-section spec.

    Accepted forms: ``s2``, ``rp3``, ``cp2``, ``hp2``, ``op2`` (the number is
    the projective/sphere index, so ``cp2`` has real dimension 4), generic
    ``sphere:d``, ``cp:l``, ``hp:l``, and a bare family name (``s``, ``cp``,
    ...) whose dimension is taken from ``d``.
    """
    if isinstance(spec, CrossSpace):
        return spec
    text = str(spec).strip().lower()
    m = _SPEC_RE.match(text)
    if not m:
        raise DomainError(f"unrecognised cross-section spec {spec!r}")
    name, index = m.groups()
    family = {"s": Family.SPHERE, "sphere": Family.SPHERE, "rp": Family.REAL_PROJECTIVE,
              "cp": Family.COMPLEX_PROJECTIVE, "hp": Family.QUATERNIONIC_PROJECTIVE,
              "op": Family.CAYLEY_PLANE}[name]
    if index is None:
        if d is None:
            raise DomainError(f"spec {spec!r} has no dimension and none was supplied")
        return make_cross(family, d)
    step = {Family.SPHERE: 1, Family.REAL_PROJECTIVE: 1, Family.COMPLEX_PROJECTIVE: 2,
            Family.QUATERNIONIC_PROJECTIVE: 4, Family.CAYLEY_PLANE: 8}[family]
    return make_cross(family, int(index) * step)


def eigenvalue(cross, k):
    """Radial eigenvalue ``lambda_k = 2k(2k - 1 + e) beta`` (exact)."""
    if k < 0:
        raise DomainError("k must be >= 0")
    return Fraction(2 * k * (2 * k - 1 + cross.e)) * cross.beta


def _check_poly(cross, coeffs):
    coeffs = [Fraction(c) for c in coeffs]
    if cross.q > 0 and any(c != 0 for c in coeffs[1::2]):
        raise DomainError("odd powers of f are not smooth radial functions when q > 0")
    return coeffs


def radial_laplacian_poly(cross, coeffs):
    """Return the coefficients of ``Delta_h (g o f)`` for ``g = sum c_j f^j``.

    On monomials ``Delta_h f^j = beta [ j(j-1+q) f^{j-2} - j(j-1+e) f^j ]``.
    """
    coeffs = _check_poly(cross, coeffs)
    out = [Fraction(0)] * max(len(coeffs), 1)
    for j, c in enumerate(coeffs):
        if c == 0 or j == 0:
            continue
        out[j] -= cross.beta * j * (j - 1 + cross.e) * c
        if j >= 2:
            out[j - 2] += cross.beta * j * (j - 1 + cross.q) * c
    return out


def poly_eval(coeffs, f):
    """Evaluate a coefficient list (Fractions allowed) at float array ``f``."""
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    for c in reversed(coeffs):
        out = out * f + float(c)
    return out


@lru_cache(maxsize=None)
def _moment_cached(q, e, k):
    value = Fraction(1)
    for alpha in range(0, 2 * k, 2):
        value *= Fraction(alpha + 1 + q, alpha + 1 + e)
    return value


def moment(cross, power):
    """Normalized moment ``<f^power>`` from the integration-by-parts recurrence.

    ``power`` must be even; the result is an exact Fraction.
    """
    if power < 0 or power % 2:
        raise DomainError("moment needs an even, non-negative power")
    return _moment_cached(cross.q, cross.e, power // 2)


def radial_density(cross, s):
    """Unnormalized volume density of geodesic spheres about a pole."""
    sb = math.sqrt(float(cross.beta))
    s = np.asarray(s, dtype=float)
    if cross.is_sphere:
        return np.sin(s) ** (cross.d - 1)
    return np.sin(sb * s) ** (cross.d - cross.q - 1) * np.sin(2 * sb * s) ** cross.q


def _f_of_s(cross, s):
    return np.cos(math.sqrt(float(cross.beta)) * s)


_GL_ORDER = 16


def _composite_gl(func, a, b, panels):
    x, w = np.polynomial.legendre.leggauss(_GL_ORDER)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return float(np.dot(weights, func(nodes)))


def integrate_radial(cross, func, npts=64, rtol=1e-12, max_points=2**20):
    """Average of ``func(f)`` over the CROSS by composite Gauss-Legendre in ``s``.

    Panels double until two successive values agree to ``rtol``.
    """
    panels = max(1, int(npts) // _GL_ORDER)

    def ratio(p):
        num = _composite_gl(lambda s: func(_f_of_s(cross, s)) * radial_density(cross, s),
                            0.0, cross.diameter, p)
        den = _composite_gl(lambda s: radial_density(cross, s), 0.0, cross.diameter, p)
        return num / den

    prev = ratio(panels)
    while True:
        panels *= 2
        if panels * _GL_ORDER > max_points:
            raise NumericalError(f"radial quadrature did not converge to {rtol:g} "
                                 f"within {max_points} points")
        cur = ratio(panels)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur


def quadrature_moment(cross, power, npts=64):
    """Independent quadrature oracle for :func:`moment`."""
    if power < 0 or power % 2:
        raise DomainError("moment needs an even, non-negative power")
    if npts < 16:
        raise DomainError("npts must be >= 16")
    if power == 0:
        return 1.0
    return integrate_radial(cross, lambda f: f ** power, npts=npts)
