import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_forge import make_gkdss, mass_bound
from horizon_forge.cross_geometry import poly_eval
from horizon_forge.errors import CertificationError, DomainError
from horizon_forge.jacobi import (JacobiOperator, a2_value, boundary_eta, build_psi, certify_eta,
                                  choose_p, d_coeff, gamma_p_power, omega_sum, top_coefficient)

CELLS = [(3, "s"), (4, "rp"), (5, "cp2"), (6, "s"), (7, "cp3")]


def test_d_coeff_sign_change():
    for n in range(3, 9):
        r_star = math.sqrt((n - 2) / n)
        assert d_coeff(n, r_star) == pytest.approx(0, abs=1e-14)
        assert d_coeff(n, 0.5 * r_star) > 0 > d_coeff(n, 0.99)
    with pytest.raises(DomainError):
        d_coeff(3, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(CELLS), st.floats(0.05, 0.95), st.integers(1, 30))
def test_psi_has_single_monomial_image(cell, frac, p):
    n, cross = cell
    sp = make_gkdss(n, cross, frac * mass_bound(n))
    coeffs = build_psi(sp, p)
    out = JacobiOperator(sp.n, sp.r_plus, sp.cross).apply(coeffs)
    assert all(c == 0 for c in out[:2 * p])
    assert out[2 * p] == top_coefficient(sp, p) * coeffs[2 * p]
    assert coeffs[2] == a2_value(sp) * coeffs[0] * -1


def test_omega_precisions_agree(space3):
    for p in (1, 5, 40):
        assert omega_sum(space3, p, "double") == pytest.approx(omega_sum(space3, p, "extended"),
                                                               rel=1e-10)


@pytest.mark.parametrize("cross,n", [("s2", 3), ("cp2", 5), ("hp2", 9), ("op2", 17)])
def test_gamma_limit(cross, n):
    from horizon_forge.cross_geometry import parse_cross

    value, limit = gamma_p_power(parse_cross(cross), 10_000)
    assert abs(value - limit) <= 1e-3


def test_choose_p_is_minimal(space4):
    info = choose_p(space4)
    p = info["p"]
    assert info["omega_sum"] > info["a2_inv"]
    if p > 1:
        assert omega_sum(space4, p - 1) <= info["a2_inv"]


def test_certificate_margins(space3):
    cert = certify_eta(space3)
    assert cert.passed
    assert cert.integral_closed == pytest.approx(cert.integral_quad, rel=1e-8)
    assert cert.integral_closed == pytest.approx(cert.details["integral_gegenbauer"], rel=1e-8)
    # the product form evaluates the energy of psi itself (offset zero)
    assert cert.details["integral_psi"] == pytest.approx(cert.integral_product_form, rel=1e-8)
    eta = boundary_eta(space3, cert)
    f = np.linspace(-1, 1, 11)
    assert np.allclose(eta.plus(f), poly_eval(cert.coeffs, f) - cert.c)
    assert np.all(eta.minus(f) == 1.0)


def test_oversized_offset_fails(space3):
    cert = certify_eta(space3)
    with pytest.raises(CertificationError):
        certify_eta(space3, p=cert.p, c=2.5 * cert.c_critical)


def test_quadratic_energy_form(space3):
    """<eta L eta> is the quadratic I0 - 2cA + d c^2 in the offset c."""
    cert = certify_eta(space3)
    vals = [certify_eta(space3, p=cert.p, c=c).integral_closed for c in (0.0, 0.1 * cert.c_critical,
                                                                           0.2 * cert.c_critical)]
    second = vals[0] - 2 * vals[1] + vals[2]
    area = space3.r_plus ** 2
    d = float(Fraction(cert.details["d_plus"]))
    assert second / (0.1 * cert.c_critical) ** 2 == pytest.approx(2 * d * area, rel=1e-6)
