from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_forge.cross_geometry import (Family, eigenvalue, make_cross, moment, parse_cross,
                                          poly_eval, quadrature_moment, radial_laplacian_poly)
from horizon_forge.errors import DimensionError, DomainError

ADMISSIBLE = [(Family.SPHERE, d) for d in range(2, 8)] + \
             [(Family.REAL_PROJECTIVE, d) for d in range(2, 8)] + \
             [(Family.COMPLEX_PROJECTIVE, 4), (Family.COMPLEX_PROJECTIVE, 6),
              (Family.QUATERNIONIC_PROJECTIVE, 8), (Family.CAYLEY_PLANE, 16)]


def test_catalog_examples():
    s2 = make_cross(Family.SPHERE, 2)
    assert (s2.q, s2.beta, s2.e) == (0, 1, 2)
    cp2 = make_cross(Family.COMPLEX_PROJECTIVE, 4)
    assert (cp2.q, cp2.beta, cp2.e) == (1, Fraction(1, 2), 5)
    op2 = make_cross(Family.CAYLEY_PLANE, 16)
    assert (op2.q, op2.beta, op2.e) == (7, Fraction(5, 12), 23)


@pytest.mark.parametrize("family,d", [(Family.COMPLEX_PROJECTIVE, 3), (Family.COMPLEX_PROJECTIVE, 2),
                                      (Family.QUATERNIONIC_PROJECTIVE, 4),
                                      (Family.CAYLEY_PLANE, 8), (Family.SPHERE, 1)])
def test_inadmissible_pairs(family, d):
    with pytest.raises(DimensionError):
        make_cross(family, d)


def test_parse_specs():
    assert parse_cross("cp2").d == 4
    assert parse_cross("hp2").d == 8
    assert parse_cross("op2").d == 16
    assert parse_cross("s", d=5).d == 5
    with pytest.raises(DomainError):
        parse_cross("xx3")
    with pytest.raises(DomainError):
        parse_cross("cp")


def test_eigenvalue_examples():
    assert eigenvalue(make_cross(Family.SPHERE, 2), 1) == 6
    assert eigenvalue(make_cross(Family.COMPLEX_PROJECTIVE, 4), 1) == 6
    for fam, d in ADMISSIBLE:
        assert eigenvalue(make_cross(fam, d), 0) == 0


def test_laplacian_examples():
    s2 = make_cross(Family.SPHERE, 2)
    assert radial_laplacian_poly(s2, [0, 0, 1]) == [2, 0, -6]
    cp2 = make_cross(Family.COMPLEX_PROJECTIVE, 4)
    assert radial_laplacian_poly(cp2, [0, 0, 1]) == [2, 0, -6]
    assert radial_laplacian_poly(s2, [1]) == [0]
    with pytest.raises(DomainError):
        radial_laplacian_poly(cp2, [0, 1])


@given(st.sampled_from(ADMISSIBLE), st.integers(min_value=1, max_value=12))
def test_laplacian_on_even_monomials(pair, k):
    cross = make_cross(*pair)
    coeffs = [0] * (2 * k) + [1]
    lap = radial_laplacian_poly(cross, coeffs)
    assert -lap[2 * k] == eigenvalue(cross, k)
    assert -lap[2 * k - 2] == -2 * k * (2 * k - 1 + cross.q) * cross.beta


@given(st.sampled_from(ADMISSIBLE), st.lists(st.integers(-5, 5), min_size=1, max_size=5))
def test_laplacian_is_self_adjoint(pair, raw):
    cross = make_cross(*pair)
    a = [0] * (2 * len(raw) - 1)
    a[::2] = raw
    b = [1, 0, -2, 0, 3]

    def pair_(u, v):
        return sum(x * y * moment(cross, i + j) for i, x in enumerate(u) for j, y in enumerate(v)
                   if x and y)

    assert pair_(radial_laplacian_poly(cross, a), b) == pair_(a, radial_laplacian_poly(cross, b))


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(ADMISSIBLE), st.integers(min_value=0, max_value=10))
def test_moments_match_quadrature(pair, k):
    cross = make_cross(*pair)
    exact = float(moment(cross, 2 * k))
    assert abs(quadrature_moment(cross, 2 * k) - exact) <= 1e-8 * exact


def test_moment_rejects_odd_power():
    with pytest.raises(DomainError):
        moment(make_cross(Family.SPHERE, 2), 3)


def test_sphere_moment_closed_form():
    # on S^2, <f^2k> = 1/(2k+1)
    s2 = make_cross(Family.SPHERE, 2)
    for k in range(6):
        assert moment(s2, 2 * k) == Fraction(1, 2 * k + 1)


def test_poly_eval_horner():
    f = np.linspace(-1, 1, 7)
    assert np.allclose(poly_eval([1, 2, Fraction(1, 2)], f), 1 + 2 * f + 0.5 * f * f)
