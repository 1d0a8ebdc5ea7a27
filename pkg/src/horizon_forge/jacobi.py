"""Jacobi operators on the horizon slices and the radial test function.

On ``N_r`` (induced metric ``r^2 h``) the Jacobi operator of a totally
geodesic slice is ``L = -r^{-2} Delta_h + d_{n,r}``.  On the cosmological
horizon ``d_{n,r_+} < 0`` so constants are destabilizing; the test function

    psi = sum_{k=0}^{p} a_{2k} f^{2k},     a_0 = -1,

has ``L psi`` concentrated in the top monomial and, once ``p`` is large
enough, positive energy ``int psi L psi``.  ``eta = psi - c`` then satisfies
both ``L eta > 0`` and ``int eta L eta > 0``.

Integrals over ``N_r`` are reported per unit ``h``-volume, i.e. as
``r^{n-1} <.>_h`` with ``<.>_h`` the normalized average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np
from scipy.special import roots_jacobi

from . import _config
from .cross_geometry import eigenvalue, integrate_radial, moment, poly_eval, radial_laplacian_poly
from .errors import CertificationError, DomainError, ExhaustionError, InternalError, NumericalError

__all__ = [
    "BoundaryEta",
    "JacobiOperator",
    "TestFunctionCert",
    "boundary_eta",
    "build_psi",
    "certify_eta",
    "choose_p",
    "d_coeff",
    "gamma_p_power",
    "omega_sum",
    "omega_terms",
]

P_MAX_DEFAULT = 100_000
EXTENDED_DPS = 32


def d_coeff(n, r):
    """``d_{n,r} = -((n-1)/2) (n - (n-2)/r^2)``; zero at ``r_*``."""
    if np.any(np.asarray(r) <= 0):
        raise DomainError("r must be positive")
    return -0.5 * (n - 1) * (n - (n - 2) / np.square(r))


def _exact_r2d(n, r):
    r2 = Fraction(r) ** 2
    return -Fraction(n - 1, 2) * (n * r2 - (n - 2)), r2


@dataclass(frozen=True)
class JacobiOperator:
    """``L = -r^{-2} Delta_h + d`` acting on even polynomials in ``f``."""

    n: int
    r: float
    cross: object

    @property
    def d(self):
        return float(d_coeff(self.n, self.r))

    def apply(self, coeffs):
        """Exact coefficients of ``L (sum c_j f^j)``."""
        r2d, r2 = _exact_r2d(self.n, self.r)
        lap = radial_laplacian_poly(self.cross, coeffs)
        out = [Fraction(0)] * max(len(coeffs), len(lap))
        for j, c in enumerate(lap):
            out[j] -= c / r2
        for j, c in enumerate(coeffs):
            out[j] += Fraction(c) * r2d / r2
        return out


def _ratio(cross, r2d, i):
    """``a_{2i+2} / a_{2i}`` for the test-function recursion."""
    q = cross.q
    return (eigenvalue(cross, i) + r2d) / (cross.beta * (2 * i + 2) * (2 * i + q + 1))


def build_psi(space, p):
    """Coefficients ``a_0, ..., a_{2p}`` (dense, odd slots zero), exact.

    Raises
    ------
    InternalError
        If ``lambda_1 / r_+^2 + d_{n,r_+} <= 0`` (cannot happen for admissible
        spaces).
    """
    if p < 1:
        raise DomainError("p must be >= 1")
    cross = space.cross
    r2d, r2 = _exact_r2d(space.n, space.r_plus)
    if eigenvalue(cross, 1) + r2d <= 0:
        raise InternalError("lambda_1 / r_+^2 + d_{n,r_+} is not positive")
    coeffs = [Fraction(0)] * (2 * p + 1)
    coeffs[0] = Fraction(-1)
    for k in range(p):
        coeffs[2 * k + 2] = _ratio(cross, r2d, k) * coeffs[2 * k]
    return coeffs


def top_coefficient(space, p):
    """``lambda_p / r_+^2 + d_{n,r_+}`` as an exact Fraction."""
    r2d, r2 = _exact_r2d(space.n, space.r_plus)
    return (eigenvalue(space.cross, p) + r2d) / r2


def _log_terms(space, p_max):
    """float64 ``log B_k`` for k = 1..p_max (``B_k = a_{2k}/a_2``)."""
    cross = space.cross
    r2d = float(_exact_r2d(space.n, space.r_plus)[0])
    i = np.arange(1, p_max, dtype=float)
    lam = 2 * i * (2 * i - 1 + cross.e) * float(cross.beta)
    t = (lam + r2d) / (float(cross.beta) * (2 * i + 2) * (2 * i + cross.q + 1))
    return np.concatenate(([0.0], np.cumsum(np.log(t))))


def _log_sum_double(space, p, logB):
    q, e = space.cross.q, space.cross.e
    j = np.arange(1, p + 1, dtype=float)
    logC = np.cumsum(np.log1p((q - e) / (2 * p + 2 * j + e - 1)))
    terms = logB[:p] + logC
    top = terms.max()
    return top + math.log(np.exp(terms - top).sum())


def omega_sum(space, p, precision=None):
    """``sum_{k=1}^p Omega_{k,p}`` with ``Omega_{k,p} = B_k C_{k,p}``.

    ``precision`` is "extended" (mpmath, 32 digits) or "double"
    (log-space float64); defaults to ``HORIZON_FORGE_PRECISION``.
    """
    precision = precision or _config.precision()
    if precision == "double":
        return math.exp(_log_sum_double(space, p, _log_terms(space, p)))
    cross = space.cross
    r2d = _exact_r2d(space.n, space.r_plus)[0]
    with mpmath.workdps(EXTENDED_DPS):
        mf = lambda x: mpmath.mpf(x.numerator) / x.denominator
        B = mpmath.mpf(1)
        C = mpmath.mpf(1)
        total = mpmath.mpf(0)
        for k in range(1, p + 1):
            if k > 1:
                B *= mf(_ratio(cross, r2d, k - 1))
            C *= mpmath.mpf(2 * p + 2 * k + cross.q - 1) / (2 * p + 2 * k + cross.e - 1)
            total += B * C
        return float(total)


def omega_terms(space, p):
    """float64 ``(Omega_{k,p}, b_k)`` for k = 1..p, with ``b_k`` the lower
    bound obtained by replacing ``r_+^2 d_{n,r_+}`` by ``-d``."""
    cross = space.cross
    logB = _log_terms(space, p)
    j = np.arange(1, p + 1, dtype=float)
    logC = np.cumsum(np.log1p((cross.q - cross.e) / (2 * p + 2 * j + cross.e - 1)))
    beta = float(cross.beta)
    i = np.arange(1, p, dtype=float)
    t = (2 * i * (2 * i + cross.e - 1) * beta - cross.d) / (
        beta * (2 * i + 2) * (2 * i + cross.q + 1))
    b = np.exp(np.concatenate(([0.0], np.cumsum(np.log(t)))))
    return np.exp(logB[:p] + logC), b


def gauss_diagnostic(space, kmax=200):
    """``k^2 [b_{k+1}/b_k - (1 - alpha/k)]`` for k = 1..kmax (bounded if O(1/k^2))."""
    cross = space.cross
    alpha = (5 - space.n) / 2
    k = np.arange(1, kmax + 1, dtype=float)
    beta = float(cross.beta)
    ratio = (2 * k * (2 * k + cross.e - 1) * beta - cross.d) / (
        beta * (2 * k + 2) * (2 * k + cross.q + 1))
    return k * k * (ratio - (1 - alpha / k))


def gamma_p_power(cross, p):
    """``gamma_p^p`` with ``gamma_p = (2p+q+1)/(2p+e+1)`` and its limit."""
    value = math.exp(p * math.log1p((cross.q - cross.e) / (2 * p + cross.e + 1)))
    return value, math.exp((cross.q - cross.e) / 2)


def a2_value(space):
    r2d, _ = _exact_r2d(space.n, space.r_plus)
    return -r2d / (space.cross.beta * 2 * (space.cross.q + 1))


def choose_p(space, p_max=P_MAX_DEFAULT, precision=None):
    """Smallest ``p`` with ``sum_k Omega_{k,p} > 1/a_2``.

    The scan runs in float64 log-space; the decision at the returned ``p``
    (and at ``p - 1``) is then re-made in the selected precision.

    Returns
    -------
    dict
        ``p``, ``omega_sum``, ``a2``, ``a2_inv``, ``gauss_diag`` (max of the
        scaled Gauss-test residual) and the precision used.

    Raises
    ------
    ExhaustionError
        If no ``p <= p_max`` works; details carry the best partial sum.
    """
    precision = precision or _config.precision()
    a2 = float(a2_value(space))
    target = -math.log(a2)
    found = None
    best = -math.inf
    limit = 1
    logB = None
    p = 0
    while found is None and p < p_max:
        limit = min(max(2 * limit, 64), p_max)
        logB = _log_terms(space, limit)
        while p < limit:
            p += 1
            s = _log_sum_double(space, p, logB)
            best = max(best, s)
            if s > target:
                found = p
                break
    if found is None:
        raise ExhaustionError(f"no p <= {p_max} satisfies the divergence criterion",
                              {"p_max": p_max, "best_log_sum": best, "log_target": target})
    p = found
    inv = 1.0 / a2
    while p > 1 and omega_sum(space, p - 1, precision) > inv:
        p -= 1
    while omega_sum(space, p, precision) <= inv:
        p += 1
        if p > p_max:
            raise ExhaustionError("extended-precision recheck exhausted p_max", {"p_max": p_max})
    diag = gauss_diagnostic(space)
    return {"p": p, "omega_sum": omega_sum(space, p, precision), "a2": a2, "a2_inv": inv,
            "gauss_diag": float(np.max(np.abs(diag))), "precision": precision}


@dataclass
class TestFunctionCert:
    """Certificate for ``eta = psi - c`` on ``N_{r_+}`` and a constant on ``N_{r_-}``."""

    __test__ = False

    p: int
    coeffs: list
    c: float
    c_critical: float
    pointwise_min: float
    integral_closed: float
    integral_quad: float
    integral_product_form: float
    eta_minus: float
    integral_minus: float
    top: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return (self.pointwise_min > 0 and self.integral_closed > 0
                and self.integral_minus > 0)

    def as_dict(self):
        return {"p": self.p, "a2": float(self.coeffs[2]), "c": self.c,
                "c_critical": self.c_critical, "pointwise_min": self.pointwise_min,
                "integral_closed": self.integral_closed, "integral_quad": self.integral_quad,
                "integral_product_form": self.integral_product_form,
                "eta_minus": self.eta_minus, "integral_minus": self.integral_minus,
                **self.details}


def _moment_pairing(cross, coeffs_a, coeffs_b):
    """Exact ``<A B>_h`` for even polynomials."""
    total = Fraction(0)
    for i, a in enumerate(coeffs_a):
        if a == 0:
            continue
        for j, b in enumerate(coeffs_b):
            if b:
                total += a * b * moment(cross, i + j)
    return total


def energy_terms(space, p, coeffs=None):
    """Exact ``(I0, A, D)`` with ``<eta L eta> = I0 - 2cA + D c^2``."""
    coeffs = coeffs or build_psi(space, p)
    cross = space.cross
    top = top_coefficient(space, p)
    r2d, r2 = _exact_r2d(space.n, space.r_plus)
    d = r2d / r2
    A = top * coeffs[2 * p] * moment(cross, 2 * p)
    I0 = sum((top * coeffs[2 * p] * a * moment(cross, j + 2 * p)
              for j, a in enumerate(coeffs) if a), Fraction(0))
    return I0, A, d


def critical_c(I0, A, d):
    """Largest ``c`` keeping ``I0 - 2cA + d c^2 > 0`` (``d < 0``)."""
    I0, A, d = float(I0), float(A), float(d)
    if I0 <= 0:
        return 0.0
    return (math.sqrt(A * A + abs(d) * I0) - A) / abs(d)


def _gegenbauer_energy(space, coeffs, c):
    """Sphere-only oracle: ``<eta L eta>`` by Gauss-Jacobi in ``f``."""
    lam = (space.cross.d - 2) / 2
    npts = len(coeffs) + 8
    x, w = roots_jacobi(npts, lam, lam)
    w = w / w.sum()
    eta = poly_eval(coeffs, x) - c
    op = JacobiOperator(space.n, space.r_plus, space.cross)
    shifted = list(coeffs)
    shifted[0] -= Fraction(c)
    Leta = poly_eval(op.apply(shifted), x)
    return float(np.dot(w, eta * Leta))


def certify_eta(space, p=None, c=None, c_fraction=0.5, eta_minus=1.0, fgrid=10_000,
                p_max=P_MAX_DEFAULT, precision=None, rtol=1e-8):
    """Build and certify ``eta = psi - c`` on ``N_{r_+}``.

    By default ``c`` is half of the critical offset beyond which
    ``int eta L eta`` turns non-positive.

    Raises
    ------
    CertificationError
        If a margin is non-positive (e.g. ``c`` chosen too large).
    NumericalError
        If closed-form and quadrature energies disagree beyond ``rtol``.
    """
    info = choose_p(space, p_max=p_max, precision=precision) if p is None else None
    p = info["p"] if info else int(p)
    cross = space.cross
    coeffs = build_psi(space, p)
    op = JacobiOperator(space.n, space.r_plus, cross)
    residual = op.apply(coeffs)
    top = top_coefficient(space, p)
    if residual[2 * p] != top * coeffs[2 * p] or any(residual[:2 * p]):
        raise InternalError("L psi is not a single monomial")
    I0, A, d = energy_terms(space, p, coeffs)
    c_crit = critical_c(I0, A, d)
    if c is None:
        c = c_fraction * c_crit
    c = float(c)
    area = space.r_plus ** (space.n - 1)
    closed = area * float(I0 - 2 * Fraction(c) * A + d * Fraction(c) ** 2)

    shifted = list(coeffs)
    shifted[0] -= Fraction(c)
    Leta = op.apply(shifted)
    quad = area * integrate_radial(cross, lambda f: poly_eval(shifted, f) * poly_eval(Leta, f),
                                   npts=256)
    product = area * float(top * coeffs[2 * p] * moment(cross, 2 * p)) * (
        -1.0 + float(coeffs[2]) * omega_sum(space, p, precision))
    f = np.linspace(cross.f_range[0], cross.f_range[1], fgrid)
    pointwise = float(np.min(poly_eval(Leta, f)))

    d_minus = float(d_coeff(space.n, space.r_minus))
    integral_minus = d_minus * eta_minus ** 2 * space.r_minus ** (space.n - 1)
    details = {"d_plus": float(d), "d_minus": d_minus, "top": float(top),
               "integral_psi": area * float(I0)}
    if info:
        details.update({k: info[k] for k in ("omega_sum", "a2_inv", "gauss_diag", "precision")})
    if cross.is_sphere:
        details["integral_gegenbauer"] = area * _gegenbauer_energy(space, coeffs, c)
    cert = TestFunctionCert(p=p, coeffs=coeffs, c=c, c_critical=c_crit, pointwise_min=pointwise,
                            integral_closed=closed, integral_quad=quad,
                            integral_product_form=product, eta_minus=float(eta_minus),
                            integral_minus=integral_minus, top=float(top), details=details)
    if abs(closed - quad) > rtol * abs(closed):
        raise NumericalError(f"closed-form energy {closed:.17g} vs quadrature {quad:.17g}")
    if not cert.passed:
        raise CertificationError("test-function certificate has a non-positive margin",
                                 cert.as_dict())
    return cert


@dataclass(frozen=True)
class BoundaryEta:
    """Boundary data ``eta``: polynomial in ``f`` on ``N_{r_+}``, constant on ``N_{r_-}``."""

    coeffs: tuple
    c: float
    eta_minus: float

    def plus(self, f):
        return poly_eval(self.coeffs, f) - self.c

    def plus_prime(self, f):
        der = [j * a for j, a in enumerate(self.coeffs)][1:]
        return poly_eval(der, f)

    def plus_second(self, f):
        der = [j * (j - 1) * a for j, a in enumerate(self.coeffs)][2:]
        return poly_eval(der, f)

    def minus(self, f):
        return np.full_like(np.asarray(f, dtype=float), self.eta_minus)


def boundary_eta(space, cert):
    """Package the certified pair for the deformation and gluing modules."""
    return BoundaryEta(coeffs=tuple(cert.coeffs), c=cert.c, eta_minus=cert.eta_minus)
