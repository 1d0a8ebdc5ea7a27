import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_forge import radial
from horizon_forge.errors import DegeneracyError, DomainError
from horizon_forge.radial import RadialMetric


def round_sphere(d, rho=1.0):
    """Round metric on (0, pi rho) in the arclength chart."""
    return RadialMetric(interval=(0.0, np.pi * rho), W=lambda r: (np.ones_like(r), np.zeros_like(r)),
                        b=lambda r: (rho * np.sin(r / rho), np.cos(r / rho), -np.sin(r / rho) / rho),
                        d=d)


@given(st.integers(2, 8), st.floats(0.3, 3.0))
def test_round_sphere_curvature(d, rho):
    g = round_sphere(d, rho)
    r = g.sample(40, guard=1e-3)
    R = radial.scalar_curvature(g, r)
    assert np.allclose(R, d * (d + 1) / rho ** 2, rtol=1e-10)


def test_equator_is_minimal():
    g = round_sphere(3)
    assert radial.mean_curvature(g, np.pi / 2) == pytest.approx(0, abs=1e-15)
    assert radial.second_fundamental_coefficient(g, np.pi / 4) == pytest.approx(1.0)


def test_degenerate_point_raises():
    g = round_sphere(3)
    with pytest.raises(DegeneracyError):
        radial.scalar_curvature(g, np.array([0.0]))


def test_conformal_scale_constant():
    g = round_sphere(3)
    c = 4.0
    h = radial.conformal_scale(g, lambda r: (np.full_like(r, c), 0 * r, 0 * r))
    r = g.sample(20)
    assert np.allclose(radial.scalar_curvature(h, r), radial.scalar_curvature(g, r) / c)
    with pytest.raises(DomainError):
        radial.conformal_scale(g, lambda r: (-np.ones_like(r), 0 * r, 0 * r))


def test_pullback_is_isometry_invariant():
    g = round_sphere(4)
    phi = lambda u: (2.0 * u, 2.0 + 0 * u, 0 * u)
    h = radial.pullback(g, phi, (0.1, 1.4))
    u = np.linspace(0.2, 1.3, 10)
    assert np.allclose(radial.scalar_curvature(h, u), 20.0)
    with pytest.raises(DomainError):
        radial.pullback(g, lambda u: (u * u, 2 * u, 2 + 0 * u), (-1.0, 1.0))


def test_from_samples_and_consistency(space3):
    from horizon_forge.gkdss import static_metric

    g = static_metric(space3)
    assert radial.derivative_consistency(g) <= 1e-6
    r = np.linspace(space3.r_minus + 0.05, space3.r_plus - 0.05, 200)
    s = radial.from_samples(r, g.a(r), r, d=2)
    rr = np.linspace(r[10], r[-10], 20)
    assert np.allclose(radial.scalar_curvature(s, rr), 6.0, atol=1e-4)


def test_dump_grid(tmp_path, space3):
    from horizon_forge.gkdss import static_metric

    g = static_metric(space3)
    path = radial.dump_grid(g, g.sample(10), tmp_path / "g.csv", reference=6.0)
    rows = path.read_text().splitlines()
    assert rows[0] == "r,a,b,R,H,margin" and len(rows) == 11
