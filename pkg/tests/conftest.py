"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

from horizon_forge import make_gkdss, mass_bound

ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    """Store one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(passed), detail)
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def space3():
    return make_gkdss(3, "s", 0.1 * mass_bound(3))


@pytest.fixture(scope="session")
def space4():
    return make_gkdss(4, "s", 0.5 * mass_bound(4))


@pytest.fixture(scope="session")
def eta3(space3):
    from horizon_forge.jacobi import boundary_eta, certify_eta

    return boundary_eta(space3, certify_eta(space3))


@pytest.fixture(scope="session")
def pipeline3(space3, eta3):
    from horizon_forge.perturb2d import run_pipeline

    return run_pipeline(space3, eta3, grid=(128, 128), refinement=False)


@pytest.fixture(scope="session")
def main3(space3, pipeline3):
    from horizon_forge.glue import theorem_main

    return theorem_main(space3, pipeline3, delta_plus=1e-6)
