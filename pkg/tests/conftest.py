from __future__ import annotations

import pytest

from serrinlab.serrin_finder import continue_branch, cylinder_point, newton_solve_profile, refine_point

# half-period at which the unit cylinder (n = 1) bifurcates on the 64 x 64 grid;
# recomputed by the acceptance suite, frozen here to keep unit tests fast
LAMBDA_STAR_64 = 2.618599674990529


@pytest.fixture(scope="session")
def branch_n1():
    """Branch s = 0, 0.02, ..., 0.1 for n = 1, R = 1, K = 8 on the 64 x 64 grid."""
    start = cylinder_point(1, 1.0, LAMBDA_STAR_64)
    return continue_branch(start, 0.1, 0.02)


@pytest.fixture(scope="session")
def branch_n1_negative(branch_n1):
    return continue_branch(branch_n1[0], -0.1, 0.02)


@pytest.fixture(scope="session")
def refined_256(branch_n1):
    """Branch points re-converged on the 256 x 256 grid, keyed by rounded s."""
    return {round(p.s, 6): refine_point(p, (256, 256)) for p in branch_n1}


@pytest.fixture(scope="session")
def point_005(branch_n1):
    """The s = 0.05 branch point, started from its neighbour at s = 0.04."""
    near = min(branch_n1, key=lambda p: abs(p.s - 0.05))
    return newton_solve_profile(near.domain, 0.05)


ACCEPTANCE_EPS = (0.025, 0.0125, 0.00625, 0.003125)


@pytest.fixture(scope="session")
def torsion_005(point_005):
    from serrinlab.geometry import generate_grid
    from serrinlab.torsion import solve_torsion

    return solve_torsion(generate_grid(point_005.domain, 128, 32))


@pytest.fixture(scope="session")
def cmc_005(torsion_005):
    from serrinlab.cmc import solve_cmc_limit

    return solve_cmc_limit(torsion_005, ACCEPTANCE_EPS)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
