import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_forge import radial
from horizon_forge.errors import CertificationError, DimensionError, DomainError
from horizon_forge.gkdss import (check_kid, kid_residuals, make_gkdss, mass_bound, slice_geometry,
                                 solve_horizons, static_metric)


def test_mass_bound_values():
    assert mass_bound(3) == pytest.approx(1 / (3 * math.sqrt(3)), rel=1e-15)
    for n in range(3, 9):
        # V has a double root at r_* exactly at the bound
        r = math.sqrt((n - 2) / n)
        assert 1 - r * r - 2 * mass_bound(n) / r ** (n - 2) == pytest.approx(0, abs=1e-15)


def test_horizons_example():
    rm, rp = solve_horizons(3, 0.1)
    assert rm == pytest.approx(0.20914, abs=1e-4)
    assert rp == pytest.approx(0.87891, abs=1e-4)
    # oracle: positive roots of r^3 - r + 0.2
    roots = np.sort(np.roots([1, 0, -1, 0.2]).real)
    assert rm == pytest.approx(roots[1], rel=1e-14)
    assert rp == pytest.approx(roots[2], rel=1e-14)


def test_mass_out_of_range():
    with pytest.raises(DomainError):
        make_gkdss(3, "s", 0.3)
    with pytest.raises(DomainError):
        make_gkdss(3, "s", 0.0)


def test_cross_dimension_must_match():
    with pytest.raises(DimensionError):
        make_gkdss(4, "cp2", 0.1)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 8), st.floats(0.02, 0.98))
def test_horizons_are_ordered_roots(n, frac):
    sp = make_gkdss(n, "s", frac * mass_bound(n))
    assert 0 < sp.r_minus < sp.r_star < sp.r_plus < 1
    assert np.all(np.abs(sp.V([sp.r_minus, sp.r_plus])) <= 1e-12)
    r = np.linspace(sp.r_minus, sp.r_plus, 50)[1:-1]
    direct = 1 - r * r - 2 * sp.m / r ** (n - 2)
    assert np.allclose(sp.V(r), direct, atol=1e-13)
    assert np.all(sp.V(r) > 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(3, 7), st.floats(0.05, 0.95))
def test_static_metric_has_constant_curvature(n, frac):
    sp = make_gkdss(n, "s", frac * mass_bound(n))
    g = static_metric(sp)
    R = radial.scalar_curvature(g, g.sample(100))
    assert np.max(np.abs(R - n * (n - 1))) <= 1e-8


def test_kid_and_horizon_geometry(space3):
    rep = check_kid(space3)
    assert rep["passed"] and rep["max_residual"] <= 1e-8
    g = static_metric(space3)
    H = radial.mean_curvature(g, [space3.r_minus, space3.r_plus])
    assert np.all(H == 0)
    k, Hs, area = slice_geometry(space3, space3.r_star)
    assert Hs == pytest.approx(space3.d * k)


def test_kid_detects_wrong_potential(space3):
    def fake(r):
        return r, np.ones_like(r), np.zeros_like(r)

    with pytest.raises(CertificationError):
        check_kid(space3, potential=fake)


def test_surface_gravity_is_half_dV(space3):
    r = np.array([space3.r_minus, space3.r_plus])
    assert np.allclose(space3.kappa(r), 0.5 * space3.dV(r), atol=1e-14)


def test_profile_arclength_and_inverse(space3):
    prof = space3.profile
    r = np.linspace(space3.r_minus, space3.r_plus, 40)
    x = prof.x_of_r(r)
    assert x[0] == 0 and x[-1] == pytest.approx(prof.L, rel=1e-14)
    assert np.allclose(prof.r(x), r, atol=1e-13)
    # dr/dx = v
    xs = np.linspace(0.01, prof.L - 0.01, 30)
    assert np.allclose(prof.v(xs), space3.v(prof.r(xs)), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.integers(0, 5))
def test_profile_is_batch_independent(space3, fracs, extra):
    prof = space3.profile
    x = np.array(fracs) * prof.L
    alone = np.array([prof.r(np.array([v]))[0] for v in x])
    pad = np.concatenate([x, np.linspace(0, prof.L, extra)])
    assert np.array_equal(prof.r(pad)[:x.size], alone)


def test_slice_outside_interval(space3):
    with pytest.raises(DomainError):
        slice_geometry(space3, 0.999)


def test_kid_residuals_vanish_analytically(space4):
    g = static_metric(space4)
    r = g.sample(50)
    v = space4.v(r)
    V1, V2 = space4.dV(r), space4.d2V(r)
    pot = lambda rr: (v, V1 / (2 * v), V2 / (2 * v) - V1 * V1 / (4 * v ** 3))
    res = kid_residuals(g, pot, r)
    assert all(np.max(np.abs(val)) <= 1e-8 for val in res.values())
