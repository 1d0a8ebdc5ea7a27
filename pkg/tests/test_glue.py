import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_forge import make_gkdss, mass_bound
from horizon_forge.errors import ContractViolation, DomainError
from horizon_forge.glue import (PiecewiseField, Ramp, ReflectedField, StaticField, TailRamp,
                                assembly_plan, boundary_report, chain_assemble, conformal_flow,
                                corner_jump, mollify_corner, prop42_metric, round_cap_corner,
                                tilde_g_delta, tilde_margin, tilde_phi)


@settings(max_examples=60)
@given(st.floats(1e-6, 1e-1), st.floats(4.0, 100.0), st.floats(0.0, 1.2))
def test_ramp_profile(lam, ratio, frac):
    ramp = Ramp(lam, lam * ratio)
    xi = np.array([frac * ramp.Lam])
    s0 = ramp.sigma(xi)[0][0]
    assert -1e-12 <= s0 <= 1 + 1e-12
    if frac * ramp.Lam <= lam:
        assert s0 == 1.0
    if frac >= 1.0:
        assert s0 == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-6, 1e-2), st.floats(8.0, 1000.0))
def test_tail_ramp_closes(lam, ratio):
    ramp = TailRamp(lam, lam * ratio)
    f, f1, f2 = ramp.f(np.array([lam, 2 * lam, ramp.ell, ramp.Lam * (1 - 1e-9)]))
    assert f[0] == pytest.approx(lam)
    assert abs(f[-1]) <= 1e-8 * lam
    # f'' < 0 past the step
    xi = np.geomspace(2.1 * lam, 0.99 * ramp.ell, 30)
    assert np.all(ramp.f(xi)[2] < 0)


def test_ramp_rejects_bad_widths():
    with pytest.raises(DomainError):
        Ramp(1.0, 2.0)
    with pytest.raises(DomainError):
        TailRamp(1.0, 2.0)


def test_round_cap_corner():
    corner = round_cap_corner(3)
    mismatch, jump = corner_jump(corner)
    assert mismatch <= 1e-14 and np.all(jump > 0)
    field, cert = mollify_corner(corner, 0.5)
    assert cert["bmn_margin"] >= -cert["eps"]
    # verbatim pieces outside the blend collar
    x_out = np.array([0.6, 0.9])
    assert all(np.array_equal(a, b) for a, b in zip(field.values(x_out), corner.outer.values(x_out)))
    x_in = np.array([-0.3, 0.5 * cert["lam"]])
    assert all(np.array_equal(a, b) for a, b in zip(field.values(x_in), corner.inner.values(x_in)))


def test_wrong_sign_corner_rejected():
    with pytest.raises(ContractViolation):
        mollify_corner(round_cap_corner(3, swap=True), 0.5)


def test_conformal_collar(space3):
    metric, cert = prop42_metric(space3)
    assert cert["passed"]
    assert cert["boundary_metric_error"] <= 1e-10
    assert max(cert["boundary_second_fundamental_form"].values()) <= 1e-8


@pytest.mark.parametrize("n,frac", [(3, 0.1), (4, 0.5), (6, 0.9)])
def test_flow_certificate(n, frac):
    flow = conformal_flow(make_gkdss(n, "s", frac * mass_bound(n)))
    cert = flow.certificate()
    assert cert["passed"], cert
    Y, W, flow_map, theta = flow
    x = np.array([0.1, 0.5])
    assert np.array_equal(flow_map(x, 0.0), x) and np.all(theta(x, 0.0) == 1.0)
    # W points away from the middle: the flow pushes collar points toward the horizons
    assert flow_map(np.array([0.01]), 0.1)[0] < 0.01


def test_flow_width_validated(space3):
    with pytest.raises(DomainError):
        conformal_flow(space3, width=space3.profile.L)


def test_assembly_plan_scaling(space3):
    flow = conformal_flow(space3)
    plans = [assembly_plan(space3, d, flow) for d in (1e-3, 5e-4, 2.5e-4)]
    for a, b in zip(plans, plans[1:]):
        assert b.delta_minus < a.delta_minus and b.t < a.t
    for p in plans:
        assert p.residual <= 1e-10 and p.ordered
        # theta at the seam from the explicit collar flow agrees with the integrated one
        for sd in ("-", "+"):
            assert p.log_theta[sd] == pytest.approx(p.log_theta_flow[sd], abs=1e-8)


def test_plan_rejects_large_delta(space3):
    with pytest.raises(DomainError):
        assembly_plan(space3, 0.3)


def test_tilde_metric(space3):
    plan = assembly_plan(space3, 1e-3)
    field, cert = tilde_g_delta(space3, plan, np.array([1.0]))
    assert cert["passed"]
    # closed-form margin against the curvature kernel, on rows where exp(-1/y) is resolvable
    _, wide = tilde_g_delta(space3, plan, np.array([1.0]), extend=0.5 * plan.flow.w)
    assert len(wide["consistency"]) == 2 and max(wide["consistency"].values()) <= 1e-8
    # equal to g_m outside M_delta
    x = np.array([0.5 * plan.x[("-", 1)], 0.5 * (plan.x[("+", 1)] + space3.profile.L)])
    assert np.all(tilde_phi(space3, plan, x)[0] == 0)
    assert np.all(np.isnan(tilde_margin(space3, plan, x)))
    ref = StaticField(space3, field.s)
    assert all(np.array_equal(a, b) for a, b in zip(field.values(x), ref.values(x)))


def test_reflected_field_mirrors(space3):
    g = StaticField(space3, np.array([0.7, 1.2]))
    L = space3.profile.L
    mirror = ReflectedField(g, L)
    x = np.array([0.2, 0.9])
    assert all(np.allclose(a, b) for a, b in zip(mirror.values(2 * L - x), g.values(x)))


def test_piecewise_owner_order():
    s = np.array([1.0])
    a = StaticField(make_gkdss(3, "s", 0.1), s)
    b = StaticField(make_gkdss(3, "s", 0.15), s)
    a.label, b.label = "a", "b"
    pw = PiecewiseField([(0.0, 1.0, a), (0.4, 0.6, b)])
    labels = [pw.pieces[i][2].label for i in pw.owner(np.array([0.1, 0.5, 0.9]))]
    assert labels == ["a", "b", "a"]


def test_main_assembly(space3, main3):
    field, cert = main3
    assert cert["passed"]
    assert cert["R"]["static_exact"] and cert["R"]["numeric_margin"] > 0
    assert cert["boundary_metric_error"] == 0.0
    assert all(v["strict"] for v in cert["seams"].values())
    rep = boundary_report(space3, field)
    assert rep["boundary_metric_error"] == 0.0


def test_double_of_static_metric():
    sp = make_gkdss(5, "s", 0.5 * mass_bound(5))
    chain, cert = chain_assemble(sp, copies=2)
    assert cert["passed"] and cert["interface_R_error"] <= 1e-6
    assert cert["period"] == pytest.approx(2 * sp.profile.L)
    assert chain.length == pytest.approx(4 * sp.profile.L)


def test_chain_rejects_concave_ends(space3):
    from horizon_forge.glue import WarpedField

    s = np.array([1.0])
    # a cap that shrinks towards both ends: H < 0 for the outward normal at x = L
    block = WarpedField(1, s, lambda x: (1.0 + 0.1 * np.cos(x), -0.1 * np.sin(x) + 0.05 + 0 * x,
                                         -0.1 * np.cos(x)), label="bad")
    block.length = 1.0
    with pytest.raises(ContractViolation):
        chain_assemble(block, copies=1)
