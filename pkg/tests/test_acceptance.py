"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

The lines are collected by ``conftest.record`` and repeated in the pytest
terminal summary.  Tolerances are the stated ones; nothing is relaxed here.
"""

import math
import time

import numpy as np
import pytest

from conftest import record
from horizon_forge import make_gkdss, mass_bound, radial
from horizon_forge.cross_geometry import moment, quadrature_moment
from horizon_forge.gkdss import check_kid, static_metric
from horizon_forge.jacobi import certify_eta, choose_p, d_coeff, gamma_p_power

FRACS = (0.1, 0.5, 0.9)
# every admissible (n, cross) for n = 3..8, plus one HP and one Cayley-plane cell
# (neither family has an admissible dimension for n <= 8)
CELLS = ([(n, "s") for n in range(3, 9)] + [(n, "rp") for n in range(3, 9)]
         + [(5, "cp2"), (7, "cp3"), (9, "hp2"), (17, "op2")])


def matrix():
    for n, cross in CELLS:
        for frac in FRACS:
            yield n, cross, frac, make_gkdss(n, cross, frac * mass_bound(n))


def test_criterion_1_static_suite():
    start = time.perf_counter()
    worst = {"V": 0.0, "R": 0.0, "kid": 0.0, "H": 0.0}
    for n, cross, frac, sp in matrix():
        ends = np.array([sp.r_minus, sp.r_plus])
        g = static_metric(sp)
        worst["V"] = max(worst["V"], float(np.max(np.abs(sp.V(ends)))))
        R = radial.scalar_curvature(g, g.sample(200))
        worst["R"] = max(worst["R"], float(np.max(np.abs(R - n * (n - 1)))))
        worst["kid"] = max(worst["kid"], check_kid(sp, tol=1e-8)["max_residual"])
        worst["H"] = max(worst["H"], float(np.max(np.abs(radial.mean_curvature(g, ends)))))
    elapsed = time.perf_counter() - start
    ok = (worst["V"] <= 1e-12 and worst["R"] <= 1e-8 and worst["kid"] <= 1e-8
          and worst["H"] <= 1e-8 and elapsed <= 30)
    record(1, ok, f"|V(r_pm)|={worst['V']:.1e} |R-n(n-1)|={worst['R']:.1e} "
                  f"KID={worst['kid']:.1e} H={worst['H']:.1e} t={elapsed:.1f}s")
    assert ok


def test_criterion_2_test_function_certificates():
    start = time.perf_counter()
    worst_rel, worst_moment, worst_gamma, min_point, min_int = 0.0, 0.0, 0.0, math.inf, math.inf
    failures = []
    for n, cross, frac, sp in matrix():
        info = choose_p(sp, precision="extended")
        if not info["omega_sum"] > info["a2_inv"]:
            failures.append((n, cross, frac, "omega"))
        cert = certify_eta(sp, p=info["p"], precision="extended")
        min_point = min(min_point, cert.pointwise_min)
        min_int = min(min_int, cert.integral_closed)
        worst_rel = max(worst_rel, abs(cert.integral_closed - cert.integral_quad)
                        / abs(cert.integral_closed))
    for n, cross in CELLS:
        c = make_gkdss(n, cross, 0.5 * mass_bound(n)).cross
        for k in range(11):
            exact = float(moment(c, 2 * k))
            worst_moment = max(worst_moment, abs(quadrature_moment(c, 2 * k) - exact) / exact)
        value, limit = gamma_p_power(c, 10_000)
        worst_gamma = max(worst_gamma, abs(value - limit))
    elapsed = time.perf_counter() - start
    ok = (not failures and min_point > 0 and min_int > 0 and worst_rel <= 1e-8
          and worst_moment <= 1e-8 and worst_gamma <= 1e-3 and elapsed <= 120)
    record(2, ok, f"min Leta={min_point:.2e} min energy={min_int:.2e} closed/quad={worst_rel:.1e} "
                  f"moments={worst_moment:.1e} gamma={worst_gamma:.1e} t={elapsed:.1f}s")
    assert ok, failures


def test_criterion_3_boundary_legs():
    min_d, min_minus, min_plus = math.inf, math.inf, math.inf
    for n, cross, frac, sp in matrix():
        min_d = min(min_d, float(d_coeff(n, sp.r_minus)))
        cert = certify_eta(sp)
        min_minus = min(min_minus, cert.integral_minus)
        min_plus = min(min_plus, min(cert.integral_closed, cert.pointwise_min))
    ok = min_d > 0 and min_minus > 0 and min_plus > 0
    record(3, ok, f"min d(r_-)={min_d:.3f} leg-={min_minus:.2e} leg+={min_plus:.2e}")
    assert ok


PIPELINE_CASES = [(3, 0.1), (3, 0.5), (4, 0.1), (4, 0.5)]


@pytest.fixture(scope="module")
def pipeline_runs():
    from horizon_forge.jacobi import boundary_eta
    from horizon_forge.perturb2d import criticality_check, run_pipeline

    out = {}
    for n, frac in PIPELINE_CASES:
        sp = make_gkdss(n, "s", frac * mass_bound(n))
        start = time.perf_counter()
        res = run_pipeline(sp, boundary_eta(sp, certify_eta(sp)), grid=(256, 256))
        crit = criticality_check(sp, variations=10, seed=0)
        out[(n, frac)] = (res, crit, time.perf_counter() - start)
    return out


def test_criterion_4_second_order_pipeline(pipeline_runs):
    lines, ok = [], True
    for (n, frac), (res, crit, elapsed) in pipeline_runs.items():
        rep = res.report
        ident = abs(rep["eq314"]["lhs"] - rep["eq314"]["rhs"]) / abs(rep["eq314"]["rhs"])
        refine = rep["eq314_refinement"]
        order = refine["min_order"]
        solve = rep["solve"]
        d2 = rep["eq316"]["d2_minus_mu_sup"]
        bmatch = max(v["max_rel_error"] for v in rep["eq317"].values())
        case = (ident <= 0.02 and abs(refine["final_rel_error"]) <= 0.02 and order >= 1.8
                and res.mu > 0 and solve["residual"] <= 1e-6 and solve["kernel_angle"] <= 1e-3
                and d2 <= 1e-3 and bmatch <= 0.01 and rep["min_R_margin"] > 0
                and rep["min_H_boundary"] > 0 and crit["max_ratio"] <= 1e-4 and elapsed <= 600)
        ok &= case
        lines.append(f"n={n} m={frac}b: mu={res.mu:.3f} identity={ident:.1e} order={order:.2f} "
                     f"d2={d2:.1e} dH={bmatch:.1e} t*={res.t_star:.2e} crit={crit['max_ratio']:.1e} "
                     f"{elapsed:.0f}s")
    record(4, ok, "; ".join(lines))
    assert ok


def test_criterion_5_collar_assembly(space3, pipeline3):
    from horizon_forge.glue import theorem_main0

    field, cert = theorem_main0(space3, pipeline3)
    ok = (cert["passed"] and cert["R"]["min_R_margin"] > 0
          and cert["boundary_metric_error"] <= 1e-10
          and cert["boundary_second_fundamental_form"] <= 1e-8)
    record(5, ok, f"min R-n(n-1)={cert['R']['min_R_margin']:.2e} over {cert['R']['points']} pts, "
                  f"|g-g_m| on boundary={cert['boundary_metric_error']:.1e}, "
                  f"II={cert['boundary_second_fundamental_form']:.1e}")
    assert ok


def test_criterion_6_main_assembly(space3, main3):
    from horizon_forge.glue import StaticField

    field, cert = main3
    plan = field.plan
    # bitwise g_m outside M_delta, checked independently of the certificate
    L = space3.profile.L
    outside = np.concatenate([np.linspace(0.0, plan.x[("-", 1)], 40),
                              np.linspace(plan.x[("+", 1)], L, 40)])
    ref = StaticField(space3, field.s)
    bitwise = all(np.array_equal(a, b) for pa, pb in zip(field.arrays(outside), ref.arrays(outside))
                  for a, b in zip(pa, pb))
    R = cert["R"]
    seams = cert["seams"]
    ok = (cert["passed"] and bitwise and R["static_exact"] and R["numeric_margin"] > 0
          and R["conformal_margin"] > 0 and cert["tilde"]["passed"]
          and all(s["strict"] and s["match"] <= 1e-8 for s in seams.values()))
    record(6, ok, f"delta+={cert['delta_plus']:.2e} delta-={cert['delta_minus']:.2e} "
                  f"bitwise={bitwise} numeric margin={R['numeric_margin']:.2e} "
                  f"rows={R['rows']} H strict={[s['strict'] for s in seams.values()]}")
    assert ok


def test_criterion_7_conformal_field(space3):
    from horizon_forge.glue import assembly_plan, conformal_flow

    flow = conformal_flow(space3)
    fc = flow.certificate()
    deltas = [1e-3 / 2 ** j for j in range(6)]
    plans = [assembly_plan(space3, d, flow) for d in deltas]
    residual = max(p.residual for p in plans)
    dm = [p.delta_minus for p in plans]
    ts = [p.t for p in plans]
    mono = all(b < a for a, b in zip(dm, dm[1:])) and all(b < a for a, b in zip(ts, ts[1:]))
    # linear decay: halving delta_+ roughly halves both
    ratio = max(abs(b / a - 0.5) for seq in (dm, ts) for a, b in zip(seq, seq[1:]))
    ok = (fc["norm"] <= 1e-8 and fc["lie"] <= 1e-8 and fc["pullback"] <= 1e-8
          and residual <= 1e-10 and mono and ratio < 0.05)
    record(7, ok, f"|Y|-r={fc['norm']:.1e} Lie={fc['lie']:.1e} pullback={fc['pullback']:.1e} "
                  f"shooting={residual:.1e} monotone={mono} last delta-={dm[-1]:.2e} t={ts[-1]:.2e}")
    assert ok


def test_criterion_8_gluing_contract(space3, main3):
    from horizon_forge.glue import mollify_corner, round_cap_corner

    corner = round_cap_corner(3)
    field, cap = mollify_corner(corner, 0.5)
    eps = 1e-3 * 6
    x_out = np.linspace(0.5, 1.0, 9)
    x_in = np.linspace(-0.5, cap["lam"], 9)
    exact = (all(np.array_equal(a, b) for a, b in zip(field.values(x_out), corner.outer.values(x_out)))
             and all(np.array_equal(a, b) for a, b in zip(field.values(x_in), corner.inner.values(x_in))))
    margins = {"caps": cap["bmn_margin"]}
    for side, c in main3[1]["corners"].items():
        margins[f"main{side}"] = c["bmn_margin"]
    ok = exact and all(m >= -eps for m in margins.values()) and cap["eps"] == eps
    record(8, ok, "R - min(R_g, R_g~) >= " + ", ".join(f"{k}:{v:.2e}" for k, v in margins.items())
           + f" (eps={eps:g}); verbatim outside collars={exact}")
    assert ok


def test_criterion_9_chain(main3):
    from horizon_forge.glue import chain_assemble

    sp = make_gkdss(3, "s", 0.5 * mass_bound(3))
    _, double = chain_assemble(sp, copies=1)
    field, _ = main3
    _, chain = chain_assemble(field, copies=3)
    ok = (double["passed"] and double["interface_R_error"] <= 1e-6 and chain["passed"]
          and chain["rho_min"] >= 0 and chain["strict_rows"] > 0)
    record(9, ok, f"double |R-n(n-1)|={double['interface_R_error']:.1e}; 3-period chain "
                  f"rho_min={chain['rho_min']:.1e} strict rows={chain['strict_rows']}")
    assert ok
