"""Static gKdSS spaces ``g_m = V^{-1} dr^2 + r^2 h`` with
``V = 1 - r^2 - 2m / r^{n-2}``.

Near the horizons ``V`` is evaluated in factored form
``(r - r_-)(r_+ - r) S(r) / r^{n-2}`` so that ``v = sqrt(V)`` keeps full
relative accuracy as ``r -> r_+-``.

:class:`StaticProfile` provides the arclength coordinate ``x`` (``dx = dr/v``)
in which the static metric reads ``dx^2 + r(x)^2 h`` and is smooth across
the horizons; ``r(x)`` is periodic with period ``2L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.fft import dct
from scipy.optimize import brentq

from .cross_geometry import CrossSpace, parse_cross
from .errors import CertificationError, DimensionError, DomainError, InternalError, NumericalError
from .radial import RadialMetric

__all__ = [
    "GkdssSpace",
    "StaticProfile",
    "check_kid",
    "make_gkdss",
    "mass_bound",
    "slice_geometry",
    "solve_horizons",
    "static_metric",
]

GUARD = 1e-9


def mass_bound(n):
    """Upper end ``(n-2)^{(n-2)/2} / n^{n/2}`` of the admissible masses."""
    if n < 3:
        raise DomainError(f"n = {n}: dimension must be >= 3")
    return (n - 2) ** ((n - 2) / 2) / n ** (n / 2)


def _V(n, m, r):
    return 1.0 - r * r - 2.0 * m / r ** (n - 2)


def _dV(n, m, r):
    return -2.0 * r + 2.0 * (n - 2) * m * r ** (1 - n)


def solve_horizons(n, m):
    """Roots ``r_- < r_* < r_+`` of ``V``; bracketed solve plus one Newton step."""
    bound = mass_bound(n)
    if not 0.0 < m < bound:
        raise DomainError(f"mass m = {m} outside (0, {bound:.6g}) for n = {n}")
    r_star = math.sqrt((n - 2) / n)
    f = lambda r: _V(n, m, r)
    lo = (2.0 * m) ** (1.0 / (n - 2)) * 0.5
    if f(lo) >= 0 or f(r_star) <= 0 or f(1.0) >= 0:
        raise InternalError("horizon bracket failed")
    roots = []
    for a, b in ((lo, r_star), (r_star, 1.0)):
        r = brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        step = f(r) / _dV(n, m, r)
        if abs(step) < 1e-10:
            r -= step
        roots.append(r)
    return roots[0], roots[1]


@dataclass(frozen=True)
class GkdssSpace:
    """A gKdSS space; immutable after :func:`make_gkdss`."""

    n: int
    cross: CrossSpace
    m: float
    r_minus: float
    r_star: float
    r_plus: float
    _S: np.ndarray = field(repr=False, compare=False)

    @property
    def d(self):
        return self.n - 1

    def V(self, r):
        """Potential via the factored form (exact zeros at the horizons)."""
        r = np.asarray(r, dtype=float)
        return ((r - self.r_minus) * (self.r_plus - r) * np.polyval(self._S, r)
                / r ** (self.n - 2))

    def dV(self, r):
        return _dV(self.n, self.m, np.asarray(r, dtype=float))

    def d2V(self, r):
        r = np.asarray(r, dtype=float)
        return -2.0 - 2.0 * (self.n - 2) * (self.n - 1) * self.m * r ** (-self.n)

    def v(self, r):
        """Static potential ``sqrt(V)`` (zero outside the closed interval)."""
        return np.sqrt(np.maximum(self.V(r), 0.0))

    def kappa(self, r):
        """``kappa_r = (n-2) m / r^{n-1} - r``, equal to ``V'/2``."""
        r = np.asarray(r, dtype=float)
        return (self.n - 2) * self.m / r ** (self.n - 1) - r

    def d_coeff(self, r):
        r = np.asarray(r, dtype=float)
        return -0.5 * (self.n - 1) * (self.n - (self.n - 2) / (r * r))

    @cached_property
    def profile(self):
        return StaticProfile(self)


def make_gkdss(n, cross="s", m=0.1):
    """Validate ``(n, cross, m)`` and build the space.

    Raises
    ------
    DimensionError
        If the cross-section dimension is not ``n - 1``.
    DomainError
        If ``m`` is outside ``(0, mass_bound(n))``.
    """
    if n < 3:
        raise DomainError(f"n = {n}: dimension must be >= 3")
    cross = parse_cross(cross, d=n - 1)
    if cross.d != n - 1:
        raise DimensionError(f"cross-section {cross.label} has d = {cross.d}, need n - 1 = {n - 1}")
    r_minus, r_plus = solve_horizons(n, m)
    # r^{n-2} V(r) = r^{n-2} - r^n - 2m, divided by (r - r_-)(r_+ - r)
    P = np.zeros(n + 1)
    P[0] = -1.0
    P[2] = 1.0
    P[-1] -= 2.0 * m
    S, _ = np.polydiv(P, np.array([-1.0, r_minus + r_plus, -r_minus * r_plus]))
    return GkdssSpace(n=n, cross=cross, m=float(m), r_minus=r_minus,
                      r_star=math.sqrt((n - 2) / n), r_plus=r_plus, _S=S)


class StaticProfile:
    """Arclength coordinate ``x`` on the static space.

    With ``r = r_c - h cos(phi)`` the arclength element is
    ``dx = J(phi) dphi``, ``J = sqrt(r^{n-2} / S(r))``, an even
    2pi-periodic analytic function; its cosine series integrates in closed
    form and ``x -> phi`` is inverted by Newton's method.
    """

    def __init__(self, space, tol=1e-16):
        self.space = space
        self.rc = 0.5 * (space.r_minus + space.r_plus)
        self.h = 0.5 * (space.r_plus - space.r_minus)
        N = 32
        while True:
            phi = np.linspace(0.0, math.pi, N + 1)
            coef = dct(self._J(phi), type=1) / N
            coef[0] *= 0.5
            coef[-1] *= 0.5
            if np.max(np.abs(coef[-4:])) < tol * abs(coef[0]) or N >= 4096:
                break
            N *= 2
        if np.max(np.abs(coef[-4:])) > 1e-13 * abs(coef[0]):
            raise NumericalError("arclength series did not converge")
        self._c = coef
        self._k = np.arange(len(coef))
        self.L = coef[0] * math.pi

    def _J(self, phi):
        r = self.rc - self.h * np.cos(phi)
        return np.sqrt(r ** (self.space.n - 2) / np.polyval(self.space._S, r))

    def x_of_phi(self, phi):
        phi = np.asarray(phi, dtype=float)
        k = self._k[1:]
        # row-wise reduction (not BLAS) so each value is independent of the batch
        return self._c[0] * phi + (np.sin(np.multiply.outer(phi, k)) * (self._c[1:] / k)).sum(axis=-1)

    def phi_of_x(self, x):
        """Newton inversion of :meth:`x_of_phi`; each entry stops on its own test.

        Freezing converged entries makes the result independent of which
        other points share the call, so equal inputs give bitwise equal output.
        """
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        phi = flat / self._c[0]
        active = np.ones(flat.size, dtype=bool)
        worst = 0.0
        for _ in range(60):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            p = phi[idx]
            step = (self.x_of_phi(p) - flat[idx]) / self._J(p)
            phi[idx] = p - step
            done = np.abs(step) < 1e-15 * (1 + np.abs(p))
            active[idx[done]] = False
            worst = float(np.max(np.abs(step), initial=0.0))
        if active.any() and worst > 1e-12:
            raise NumericalError("arclength inversion did not converge")
        return phi.reshape(x.shape)

    def x_of_r(self, r):
        """Arclength position of radius ``r`` on the first sheet ``[0, L]``."""
        c = np.clip((self.rc - np.asarray(r, dtype=float)) / self.h, -1.0, 1.0)
        return self.x_of_phi(np.arccos(c))

    def jets(self, x):
        """``(r, r', r'', r''')`` as functions of arclength."""
        phi = self.phi_of_x(x)
        r = self.rc - self.h * np.cos(phi)
        r1 = self.h * np.sin(phi) / self._J(phi)
        r2 = self.space.kappa(r)
        r3 = 0.5 * self.space.d2V(r) * r1
        return r, r1, r2, r3

    def r(self, x):
        return self.rc - self.h * np.cos(self.phi_of_x(x))

    def v(self, x):
        """Lapse in arclength form: ``v = dr/dx`` on ``[0, L]``."""
        return self.jets(x)[1]

    def metric(self):
        """The static metric in arclength gauge on ``[0, L]``."""
        one = lambda x: (np.ones_like(np.asarray(x, float)), np.zeros_like(np.asarray(x, float)))

        def b(x):
            r, r1, r2, _ = self.jets(x)
            return r, r1, r2

        return RadialMetric(interval=(0.0, self.L), W=one, b=b, d=self.space.d,
                            label="g_m(arclength)")


def static_metric(space):
    """``g_m`` in the ``r`` coordinate, represented with ``W = V``, ``b = r``."""

    def W(r):
        return space.V(r), space.dV(r)

    def b(r):
        r = np.asarray(r, dtype=float)
        return r, np.ones_like(r), np.zeros_like(r)

    return RadialMetric(interval=(space.r_minus, space.r_plus), W=W, b=b, d=space.d,
                        bdot=lambda r: space.v(r), label="g_m")


def _static_potential(space):
    def pot(r):
        v = space.v(r)
        V1, V2 = space.dV(r), space.d2V(r)
        return v, V1 / (2 * v), V2 / (2 * v) - V1 * V1 / (4 * v ** 3)

    return pot


def kid_residuals(metric, potential, r):
    """Residuals of the static equations for ``potential(r) -> (v, v', v'')``.

    Returns a dict with the trace ``Delta v + n v`` and the normal (rr) and
    tangential components of ``Hess v - (Delta v) g - v Ric`` in an
    orthonormal frame.
    """
    d = metric.d
    n = d + 1
    w, w1 = metric.W(r)
    b0, bd, bdd = metric.arclength_jets(r)
    v, v1, v2 = potential(r)
    vd = v1 * np.sqrt(w)
    vdd = v2 * w + 0.5 * w1 * v1
    lap = vdd + d * bd * vd / b0
    ric_nn = -d * bdd / b0
    ric_tt = ((d - 1) * (1 - bd * bd) - b0 * bdd) / (b0 * b0)
    return {
        "trace": lap + n * v,
        "normal": vdd - lap - v * ric_nn,
        "tangential": bd * vd / b0 - lap - v * ric_tt,
    }


def check_kid(space, gridpts=200, tol=1e-8, potential=None):
    """Certify the KID equations on interior Chebyshev points.

    ``potential`` defaults to ``v = sqrt(V)``; any callable
    ``r -> (v, v', v'')`` may be substituted for controls.

    Raises
    ------
    CertificationError
        If any residual exceeds ``tol`` (details carry the worst point).
    """
    metric = static_metric(space)
    r = metric.sample(gridpts, guard=GUARD)
    res = kid_residuals(metric, potential or _static_potential(space), r)
    report = {"gridpts": int(gridpts), "tol": tol}
    worst = 0.0
    for key, val in res.items():
        i = int(np.argmax(np.abs(val)))
        report[f"max_{key}"] = float(abs(val[i]))
        report[f"worst_r_{key}"] = float(r[i])
        worst = max(worst, float(abs(val[i])))
    report["max_residual"] = worst
    report["passed"] = worst <= tol
    if not report["passed"]:
        raise CertificationError(f"KID residual {worst:.3e} exceeds {tol:g}", report)
    return report


def slice_geometry(space, r):
    """``(principal curvature, mean curvature, area factor)`` of the slice ``N_r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < space.r_minus) or np.any(r > space.r_plus):
        raise DomainError("slice radius outside [r_-, r_+]")
    k = space.v(r) / r
    return k, space.d * k, r ** space.d
