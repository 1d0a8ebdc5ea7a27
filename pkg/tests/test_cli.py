import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from horizon_forge import cli


def run(argv, tmp_path=None):
    out = tmp_path / "r.json"
    code = cli.run(list(argv) + ["--out", str(out)])
    return code, json.loads(out.read_text()), out.read_text()


def test_horizons_report(tmp_path):
    code, rep, _ = run(["horizons", "--n", "3", "--m", "0.1"], tmp_path)
    assert code == 0 and rep["passed"]
    res = rep["result"]
    assert res["r_minus"] == pytest.approx(0.20914, abs=1e-4)
    assert res["r_plus"] == pytest.approx(0.87891, abs=1e-4)
    assert set(res) == {"n", "m", "mass_bound", "r_minus", "r_star", "r_plus", "residuals"}
    assert rep["schema_version"] == cli.SCHEMA_VERSION


def test_mass_out_of_range_is_usage_error(tmp_path):
    code, rep, _ = run(["certify-eta", "--n", "3", "--m", "0.3"], tmp_path)
    assert code == 1 and "0.19245" in rep["error"]


def test_unknown_flag(capsys):
    assert cli.run(["horizons", "--n", "3", "--m", "0.1", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_command(capsys):
    assert cli.run(["frobnicate"]) == 1


def test_help_exits_zero(capsys):
    assert cli.run(["--help"]) == 0
    assert cli.run(["horizons", "--help"]) == 0


def test_failed_certificate_exit_code(tmp_path):
    code, rep, _ = run(["certify-eta", "--n", "3", "--m-frac", "0.1", "--p", "3", "--c", "5"],
                       tmp_path)
    assert code == 2 and not rep["passed"]


def test_reports_are_deterministic(tmp_path):
    argv = ["certify-eta", "--n", "4", "--m-frac", "0.5"]
    _, a, _ = run(argv, tmp_path)
    _, b, _ = run(argv, tmp_path)
    a.pop("wall_clock"), b.pop("wall_clock")
    assert cli.dumps(a) == cli.dumps(b)


def test_static_check_dump(tmp_path):
    code, rep, _ = run(["static-check", "--n", "4", "--m-frac", "0.5", "--dump-dir",
                        str(tmp_path)], tmp_path)
    assert code == 0
    head = (tmp_path / "static.csv").read_text().splitlines()[0].split(",")
    assert head[:5] == ["r", "a", "b", "R", "H"] and "rho" in head


def test_sweep_table(tmp_path):
    code, rep, _ = run(["sweep", "--n", "3..5", "--cross", "s,cp2", "--m-frac", "0.1,0.9",
                        "--stage", "horizons", "--jobs", "2"], tmp_path)
    res = rep["result"]
    assert code == 0
    assert res["counts"] == {"pass": 8, "fail": 0, "skipped": 4}
    assert len(res["cells"]) == 12


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(v):
    assert float(json.loads(cli.dumps({"v": v}))["v"]) == v


def test_to_plain_summarizes_long_arrays():
    plain = cli.to_plain({"a": np.arange(1000.0), "b": np.arange(3)})
    assert plain["a"] == {"size": 1000, "min": 0.0, "max": 999.0}
    assert plain["b"] == [0, 1, 2]
