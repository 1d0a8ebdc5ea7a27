import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from horizon_forge import _kernels
from horizon_forge._jets import Jet
from horizon_forge._kernels import Taylor2


def poly_jet(a, b, c, x, s):
    """Jet of a + b x s + c x^2 at (x, s)."""
    f = a + b * x * s + c * x * x
    return Jet(2, {(0, 0): f, (1, 0): b * s + 2 * c * x, (0, 1): b * x, (2, 0): 2 * c,
                   (1, 1): b, (0, 2): 0.0})


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2))
def test_jet_product_rule(a, b, c, x, s):
    f = poly_jet(a, b, c, x, s)
    g = poly_jet(c, a, b, x, s)
    h = f * g
    # direct derivatives of the product polynomial by central differences of exact values
    assert h[(0, 0)] == pytest.approx(f.val * g.val)
    assert h[(1, 0)] == pytest.approx(f[(1, 0)] * g.val + f.val * g[(1, 0)], abs=1e-12)
    assert h[(1, 1)] == pytest.approx(f[(1, 1)] * g.val + f[(1, 0)] * g[(0, 1)]
                                      + f[(0, 1)] * g[(1, 0)] + f.val * g[(1, 1)], abs=1e-9)


def test_jet_shift():
    f = poly_jet(1.0, 2.0, 3.0, 0.5, 0.25)
    assert f.dx()[(0, 0)] == f[(1, 0)] and f.ds()[(1, 0)] == f[(1, 1)]


@given(st.floats(0.5, 2), st.floats(-1, 1), st.floats(0.5, 2), st.floats(-1, 1))
def test_taylor_division(a0, a1, b0, b1):
    q = Taylor2(a0, a1, 0.3) / Taylor2(b0, b1, -0.2)
    back = q * Taylor2(b0, b1, -0.2)
    assert (back.c0, back.c1, back.c2) == pytest.approx((a0, a1, 0.3), abs=1e-12)


def flat_components(shape, rng):
    """Random small perturbation of the flat product metric."""
    def comp(base):
        return tuple((base if i == 0 else 0.0) + 0.05 * rng.standard_normal(shape)
                     for i in range(6))
    return comp(1.0), comp(0.0), comp(1.0), comp(1.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_jit_and_numpy_agree(seed, k):
    if not _kernels.jit_active():
        pytest.skip("numba kernels disabled")
    rng = np.random.default_rng(seed)
    E, F, G, P = flat_components((7, 5), rng)
    a = _kernels.curvature(E, F, G, P, k, use_jit=False)
    b = _kernels.curvature(E, F, G, P, k, use_jit=True)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_round_sphere_point():
    # S^3 as dx^2 + sin^2 x ds^2 + sin^2 x sin^2 s g_{S^1}: R = 6
    x, s = 0.7, 1.1
    sx, cx, ss, cs = np.sin(x), np.cos(x), np.sin(s), np.cos(s)
    E = (1.0, 0, 0, 0, 0, 0)
    F = (0.0,) * 6
    G = (sx * sx, 2 * sx * cx, 0.0, 2 * (cx * cx - sx * sx), 0.0, 0.0)
    P = (sx * sx * ss * ss, 2 * sx * cx * ss * ss, 2 * sx * sx * ss * cs,
         2 * (cx * cx - sx * sx) * ss * ss, 4 * sx * cx * ss * cs, 2 * sx * sx * (cs * cs - ss * ss))
    R = _kernels.curvature(*(tuple(np.array([v]) for v in c) for c in (E, F, G, P)), 1,
                           use_jit=False)
    assert R[0] == pytest.approx(6.0, rel=1e-13)
