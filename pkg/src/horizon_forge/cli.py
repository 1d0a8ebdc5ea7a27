"""Command-line entry points and certificate reports.

Every subcommand writes one JSON report (stdout or ``--out``) and exits with

* 0 when the run certified,
* 2 when the run was valid but a certificate failed,
* 1 on usage or parameter errors.

Floats are written with 17 significant digits so reports round-trip
exactly; apart from ``wall_clock`` two runs with the same parameters give
byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

import numpy as np

from . import __version__, _config
from .errors import CertificationError, DomainError, HorizonForgeError, NumericalError

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2
COMMANDS = ("horizons", "static-check", "certify-eta", "build-prelprop", "build-main0",
            "build-main", "chain", "sweep")
MAX_LIST = 64


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- serialization


def _float(v):
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return "%.17g" % v


def to_plain(obj):
    """Reduce ``obj`` to JSON-compatible builtins (long arrays are summarized)."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating, Fraction)):
        return float(obj)
    if isinstance(obj, str) or obj is None:
        return obj
    if isinstance(obj, np.ndarray):
        if obj.size > MAX_LIST:
            flat = obj.astype(float).ravel()
            return {"size": int(flat.size), "min": float(np.min(flat)), "max": float(np.max(flat))}
        return to_plain(obj.tolist())
    if isinstance(obj, (list, tuple)):
        if len(obj) > MAX_LIST and all(isinstance(v, (int, float, np.number)) for v in obj):
            return to_plain(np.asarray(obj, dtype=float))
        return [to_plain(v) for v in obj]
    if hasattr(obj, "as_dict"):
        return to_plain(obj.as_dict())
    if hasattr(obj, "summary"):
        return to_plain(obj.summary())
    if dataclasses.is_dataclass(obj):
        return to_plain({f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)
                         if not f.name.startswith("_")})
    return repr(obj)


def dumps(obj, indent=2, _level=0):
    """JSON text with ``%.17g`` floats and sorted keys."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{dumps(str(k))}: {dumps(obj[k], indent, _level + 1)}"
                 for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent, _level + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _float(obj)
    import json

    return json.dumps(obj)


def _csv(path, cols):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(cols))
        for row in zip(*cols.values()):
            writer.writerow([_float(float(v)) for v in row])
    return path


def dump_field(field, space, x, path, s_index=None):
    """CSV ``x, s, r, a, b, R, H, rho`` of a reduced field along one ``s`` row."""
    x = np.asarray(x, dtype=float)
    j = field.s.size // 2 if s_index is None else s_index
    target = space.n * (space.n - 1)
    with np.errstate(all="ignore"):
        E, _, _, P = field.values(x)
        R = field.curvature(x)
        H = field.mean_curvature(x, 1.0)
    return _csv(path, {"x": x, "s": np.full(x.size, field.s[j]), "r": space.profile.r(x),
                       "a": np.sqrt(E[:, j]), "b": np.sqrt(P[:, j]), "R": R[:, j], "H": H[:, j],
                       "rho": 0.5 * (R[:, j] - target)})


# ---------------------------------------------------------------- parameters


def _space(args):
    from .gkdss import make_gkdss, mass_bound

    if args.n is None:
        raise UsageError("--n is required")
    if (args.m is None) == (args.m_frac is None):
        raise UsageError("give exactly one of --m and --m-frac")
    n = int(args.n)
    if n < 3:
        raise DomainError(f"n = {n}: dimension must be >= 3")
    m = args.m if args.m is not None else args.m_frac * mass_bound(n)
    return make_gkdss(n, args.cross, m)


def _params(args, space=None):
    out = {k: v for k, v in vars(args).items()
           if k not in ("command", "out", "dump_dir", "jobs", "handler")}
    if space is not None:
        out.update({"n": space.n, "m": space.m, "cross": space.cross.label})
    return out


def _dump_path(args, name):
    if not args.dump_dir:
        return None
    os.makedirs(args.dump_dir, exist_ok=True)
    return os.path.join(args.dump_dir, name)


def _eta(space, args):
    from .jacobi import boundary_eta, certify_eta

    cert = certify_eta(space, p_max=args.p_max)
    return cert, boundary_eta(space, cert)


def _pipeline(space, args, refinement=False):
    from .perturb2d import parse_grid, run_pipeline

    cert, eta = _eta(space, args)
    res = run_pipeline(space, eta, grid=parse_grid(args.grid), t_max=args.t_max,
                       refinement=refinement)
    return cert, res


# ---------------------------------------------------------------- commands


def cmd_horizons(args):
    from .gkdss import _V, mass_bound

    space = _space(args)
    res = {"r_minus": float(_V(space.n, space.m, space.r_minus)),
           "r_plus": float(_V(space.n, space.m, space.r_plus))}
    body = {"n": space.n, "m": space.m, "mass_bound": mass_bound(space.n),
            "r_minus": space.r_minus, "r_star": space.r_star, "r_plus": space.r_plus,
            "residuals": res}
    return space, body, True


def cmd_static_check(args):
    from . import radial
    from .gkdss import check_kid, static_metric

    space = _space(args)
    metric = static_metric(space)
    target = space.n * (space.n - 1)
    r = metric.sample(200)
    R = radial.scalar_curvature(metric, r)
    ends = np.array([space.r_minus, space.r_plus])
    H = radial.mean_curvature(metric, ends)
    i = int(np.argmax(np.abs(R - target)))
    try:
        kid = check_kid(space, tol=args.tol)
    except CertificationError as exc:
        kid = exc.details
    body = {"V_horizons": float(np.max(np.abs(space.V(ends)))),
            "R_error": float(abs(R[i] - target)), "R_worst_r": float(r[i]),
            "H_horizons": float(np.max(np.abs(H))), "kid": kid}
    passed = (body["V_horizons"] <= 1e-12 and body["R_error"] <= args.tol
              and body["H_horizons"] <= args.tol and kid["passed"])
    path = _dump_path(args, "static.csv")
    if path:
        radial.dump_grid(metric, r, path, reference=target, extra={"rho": 0.5 * (R - target)})
    return space, body, passed


def cmd_certify_eta(args):
    from .cross_geometry import poly_eval
    from .jacobi import JacobiOperator, certify_eta

    space = _space(args)
    cert = certify_eta(space, p=args.p, c=args.c, p_max=args.p_max)
    d = cert.as_dict()
    body = {k: d.get(k) for k in ("p", "a2", "c", "pointwise_min", "integral_closed",
                                   "integral_quad", "omega_sum", "a2_inv", "gauss_diag")}
    body["details"] = d
    path = _dump_path(args, "eta.csv")
    if path:
        f = np.linspace(*space.cross.f_range, 401)
        shifted = list(cert.coeffs)
        shifted[0] -= Fraction(cert.c)
        Leta = JacobiOperator(space.n, space.r_plus, space.cross).apply(shifted)
        _csv(path, {"f": f, "eta": poly_eval(shifted, f), "L_eta": poly_eval(Leta, f)})
    return space, body, cert.passed


def cmd_build_prelprop(args):
    from .glue import as_field
    from .perturb2d import criticality_check

    space = _space(args)
    _, res = _pipeline(space, args, refinement=False)
    crit = criticality_check(space, seed=args.seed)
    rep = res.report
    body = {"mu": res.mu, "t_star": res.t_star, "min_R_margin": rep["min_R_margin"],
            "min_H_boundary": rep["min_H_boundary"], "eq314_lhs": rep["eq314"]["lhs"],
            "eq314_rhs": rep["eq314"]["rhs"], "criticality_max": crit["max_ratio"],
            "report": {k: v for k, v in rep.items() if k != "trace"}}
    passed = (res.mu > 0 and rep["min_R_margin"] > 0 and rep["min_H_boundary"] > 0
              and crit["passed"])
    path = _dump_path(args, "prelprop.csv")
    if path:
        dump_field(as_field(res), space, res.grid.x, path)
    return space, body, passed


def cmd_build_main0(args):
    from .glue import theorem_main0

    space = _space(args)
    _, res = _pipeline(space, args)
    field, cert = theorem_main0(space, res)
    path = _dump_path(args, "main0.csv")
    if path:
        dump_field(field, space, res.grid.x[1:-1], path)
    return space, {"pipeline_t_star": res.t_star, "mu": res.mu, **cert}, cert["passed"]


def _main(space, args):
    from .glue import theorem_main

    _, res = _pipeline(space, args)
    field, cert = theorem_main(space, res, delta_plus=args.delta_plus)
    return res, field, cert


def cmd_build_main(args):
    space = _space(args)
    res, field, cert = _main(space, args)
    path = _dump_path(args, "main.csv")
    if path:
        dump_field(field, space, res.grid.x, path)
    return space, {"pipeline_t_star": res.t_star, "mu": res.mu, **cert}, cert["passed"]


def cmd_chain(args):
    from .glue import chain_assemble

    space = _space(args)
    body = {}
    if args.block == "static":
        block = space
    else:
        _, block, mcert = _main(space, args)
        body["block"] = {k: mcert[k] for k in ("delta_plus", "delta_minus", "passed")}
    chain, cert = chain_assemble(block, copies=args.copies, tol=args.tol)
    body.update(cert)
    path = _dump_path(args, "chain.csv")
    if path:
        x = np.linspace(0.0, chain.length, 40 * args.copies + 1)
        with np.errstate(all="ignore"):
            E, _, _, P = chain.values(x)
            R = chain.curvature(x)
        j = chain.s.size // 2
        target = space.n * (space.n - 1)
        _csv(path, {"x": x, "a": np.sqrt(E[:, j]), "b": np.sqrt(P[:, j]), "R": R[:, j],
                    "rho": 0.5 * (R[:, j] - target)})
    return space, body, cert["passed"]


def _int_range(text):
    out = []
    for part in str(text).split(","):
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise UsageError(f"empty range {text!r}")
    return out


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v]
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}") from exc


def _cell(argv):
    code, report = execute(argv)
    return argv, code, report


def cmd_sweep(args):
    if args.m is not None:
        raise UsageError("sweep takes --m-frac, not --m")
    if args.stage == "sweep":
        raise UsageError("sweep cannot nest")
    ns = _int_range(args.n)
    fracs = _float_list(args.m_frac if args.m_frac is not None else "0.1,0.5,0.9")
    crosses = [c for c in args.cross.split(",") if c]
    cells = []
    for n in ns:
        for cross in crosses:
            for frac in fracs:
                argv = [args.stage, "--n", str(n), "--cross", cross, "--m-frac", repr(frac),
                        "--tol", repr(args.tol), "--p-max", str(args.p_max), "--grid", args.grid,
                        "--t-max", repr(args.t_max), "--delta-plus", repr(args.delta_plus),
                        "--seed", str(args.seed)]
                cells.append(argv)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_cell, cells))
    else:
        results = [_cell(argv) for argv in cells]
    table, reports = [], []
    for argv, code, report in results:
        status = {EXIT_OK: "pass", EXIT_FAILED: "fail"}.get(code, "skipped")
        par = report.get("parameters", {})
        table.append({"n": int(argv[2]), "cross": argv[4], "m_frac": float(argv[6]),
                      "status": status, "error": report.get("error")})
        reports.append(report)
    counts = {s: sum(row["status"] == s for row in table) for s in ("pass", "fail", "skipped")}
    body = {"stage": args.stage, "table": table, "counts": counts, "cells": reports}
    return None, body, counts["fail"] == 0 and counts["pass"] > 0


HANDLERS = {"horizons": cmd_horizons, "static-check": cmd_static_check,
            "certify-eta": cmd_certify_eta, "build-prelprop": cmd_build_prelprop,
            "build-main0": cmd_build_main0, "build-main": cmd_build_main, "chain": cmd_chain,
            "sweep": cmd_sweep}


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _common(p, sweep=False):
    if sweep:
        p.add_argument("--n", default="3..6", help="dimensions, e.g. 3..6 or 3,5")
        p.add_argument("--cross", default="s", help="comma-separated cross-section specs")
        p.add_argument("--stage", default="certify-eta", choices=COMMANDS[:-1])
    else:
        p.add_argument("--n", type=int, help="dimension of the slice")
        p.add_argument("--cross", default="s", help="cross-section spec (s, rp, cp2, hp2, op2, ...)")
    p.add_argument("--m", type=float, help="mass parameter")
    p.add_argument("--m-frac", dest="m_frac", type=(str if sweep else float),
                   help="mass as a fraction of the mass bound")
    p.add_argument("--grid", default="128x128", help="2D grid, e.g. 256x256")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--p-max", dest="p_max", type=int, default=100_000)
    p.add_argument("--delta-plus", dest="delta_plus", type=float, default=1e-6)
    p.add_argument("--t-max", dest="t_max", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--dump-dir", dest="dump_dir", help="directory for CSV grids")
    p.add_argument("--jobs", type=int, default=1)


def build_parser():
    parser = _Parser(prog="horizon-forge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    helps = {"horizons": "horizon radii of g_m",
             "static-check": "static metric, KID and horizon checks",
             "certify-eta": "boundary test function certificate",
             "build-prelprop": "second-order deformation g(t*)",
             "build-main0": "collar gluing keeping R > n(n-1) up to the horizons",
             "build-main": "gluing back to g_m near the horizons",
             "chain": "double and periodic chain",
             "sweep": "run one stage over a parameter matrix"}
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _common(p, sweep=name == "sweep")
        if name == "certify-eta":
            p.add_argument("--p", type=int)
            p.add_argument("--c", type=float)
        if name == "chain":
            p.add_argument("--copies", type=int, default=3)
            p.add_argument("--block", choices=("main", "static"), default="main")
    return parser


# ---------------------------------------------------------------- driver


def execute(argv):
    """Parse and run; returns ``(exit_code, report)`` without writing anything."""
    start = time.perf_counter()
    report = {"schema_version": SCHEMA_VERSION, "version": __version__}
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(build_parser().format_usage())
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        report["command"] = args.command
        report["parameters"] = _params(args)
        report["precision"] = _config.precision()
        report["jit"] = _config.jit_requested()
        space, body, passed = HANDLERS[args.command](args)
        report["parameters"] = _params(args, space)
        report["result"] = to_plain(body)
        report["passed"] = bool(passed)
        code = EXIT_OK if passed else EXIT_FAILED
    except (UsageError, DomainError, ValueError) as exc:
        report.update(passed=False, error=f"{type(exc).__name__}: {exc}")
        code = EXIT_USAGE
    except (CertificationError, NumericalError) as exc:
        report.update(passed=False, error=f"{type(exc).__name__}: {exc}",
                      result=to_plain(getattr(exc, "details", {}) or {}))
        code = EXIT_FAILED
    except HorizonForgeError as exc:
        report.update(passed=False, error=f"{type(exc).__name__}: {exc}")
        code = EXIT_USAGE
    report["exit_code"] = code
    report["wall_clock"] = time.perf_counter() - start
    return code, report


def run(argv=None, stdout=None):
    """Run a subcommand; writes the report and returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = stdout or sys.stdout
    if not argv or argv[0] in ("-h", "--help", "--version"):
        try:
            build_parser().parse_args(argv or ["--help"])
        except SystemExit as exc:
            return EXIT_OK if not argv or exc.code in (0, None) else EXIT_USAGE
        except UsageError:
            pass
        return EXIT_OK
    if any(a in ("-h", "--help") for a in argv):
        try:
            build_parser().parse_args(argv)
        except (SystemExit, UsageError):
            pass
        return EXIT_OK
    try:
        code, report = execute(argv)
    except Exception:  # pragma: no cover - keeps the exit-code contract exhaustive
        traceback.print_exc()
        return EXIT_USAGE
    if code == EXIT_USAGE and "parameters" not in report:
        print(report["error"], file=sys.stderr)
    text = dumps(report) + "\n"
    out = None
    for i, a in enumerate(argv):
        if a == "--out" and i + 1 < len(argv):
            out = argv[i + 1]
        elif a.startswith("--out="):
            out = a.split("=", 1)[1]
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
