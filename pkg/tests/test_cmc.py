from __future__ import annotations

import numpy as np
import pytest

from serrinlab.cmc import (
    GraphEnergy,
    curvature_residual_field,
    shift_periodicity_check,
    solve_cmc_eps,
    solve_cmc_limit,
)
from serrinlab.errors import CEpsNonPositive, UnboundedSuspected
from serrinlab.geometry import build_profile, generate_grid
from serrinlab.torsion import solve_torsion

from conftest import ACCEPTANCE_EPS


def cap(r, R, eps):
    return np.sqrt(R**2 - r**2) - np.sqrt(R**2 - (R - eps) ** 2)


def cylinder_torsion(n, R=1.0, n_rho=256, n_t=8, lam=1.0):
    return solve_torsion(generate_grid(build_profile(n, lam, [R]), n_rho, n_t))


@pytest.mark.parametrize("n", [1, 2])
def test_cap_reproduced(n):
    sol = cylinder_torsion(n)
    f = solve_cmc_eps(sol, 0.1)
    assert np.max(np.abs(f.w - cap(f.grid.r, 1.0, 0.1))) < 5e-4
    assert f.residual <= 1e-10
    assert np.all(f.w >= 0.0)


@pytest.mark.parametrize("R", [1.0, 2.0])
def test_cap_contact_flux(R):
    sol = cylinder_torsion(2, R=R)
    qs = []
    for eps in (0.1, 0.05, 0.025):
        f = solve_cmc_eps(sol, eps)
        assert np.max(np.abs(f.contact - (1 - eps / R))) < 2e-3
        qs.append(float(np.mean(f.contact)))
    assert np.all(np.diff(qs) > 0) and qs[-1] <= 1.0


def test_energy_descent(cmc_005):
    for f in cmc_005.w_fields:
        hist = f.energy_history[:-1]
        assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1]))
        # the minimizer beats the zero function
        assert hist[-1] < f.energy_history[-1]
        E = GraphEnergy(f.grid, cmc_005.beta)
        assert E.value(f.w.ravel() - f.w[-1, 0]) == pytest.approx(hist[-1], rel=1e-9)


def test_small_load_matches_torsion():
    sol = cylinder_torsion(2, n_rho=64)
    beta = 100 * sol.beta_mean
    f = solve_cmc_eps(sol, 0.1, beta=beta)
    u = solve_torsion(f.grid).u / beta
    scale = np.max(u)
    assert np.max(np.abs(f.w - u)) < 1e-3 * scale


def test_residual_of_planes():
    d = build_profile(1, 2.0, [1.0])
    grid = generate_grid(d, 32, 32)
    beta = 0.7
    zero = curvature_residual_field(grid, np.zeros(grid.shape), beta)
    np.testing.assert_allclose(zero[:-1], -1 / beta, atol=1e-14)
    assert np.all(np.isnan(zero[-1]))
    affine = np.broadcast_to(0.3 * grid.t, grid.shape).copy()
    res = curvature_residual_field(grid, affine, beta, walls_symmetric=False)
    np.testing.assert_allclose(res[:-1], -1 / beta, atol=1e-12)


def test_eps_guards():
    sol = cylinder_torsion(1, n_rho=32)
    with pytest.raises(CEpsNonPositive):
        solve_cmc_eps(sol, 0.0)
    with pytest.raises(ValueError):
        solve_cmc_limit(sol, (0.05, 0.1))
    with pytest.raises(ValueError):
        solve_cmc_limit(sol, (0.05,))


def test_cap_limit():
    sol = cylinder_torsion(1, n_rho=256)
    c = solve_cmc_limit(sol, (0.1, 0.05, 0.025, 0.0125))
    r = c.compact_grid.r
    exact = np.sqrt(1 - r**2)
    assert np.max(np.abs(c.w_limit - (exact - exact.mean()))) < 5e-3
    assert c.curvature_residual < 5e-4
    assert c.periodicity_residual < 1e-6
    assert c.bounded
    assert np.all(np.diff(c.cauchy_differences) < 0)


def test_branch_limit(cmc_005, point_005):
    c = cmc_005
    assert c.bounded
    assert c.curvature_residual < 1e-3
    assert c.periodicity_residual < 5e-4
    phi_min = float(np.min(point_005.domain.phi(np.linspace(0, point_005.lam, 513))))
    for f in c.w_fields:
        assert np.min(f.contact) >= 1 - 2 * f.eps / phi_min
        assert np.max(f.contact) <= 1.0
        assert np.all(f.w >= 0)
    assert c.contact_profile(0.3, c.eps_sequence[0]) == pytest.approx(
        c.contact_profile(-0.3 + 2 * point_005.lam, c.eps_sequence[0]), abs=1e-12)


def test_evenness_and_shift(cmc_005):
    f = cmc_005.w_fields[-1]
    # zero conormal flux at the walls: one-sided t-differences vanish to O(h^2)
    h = f.grid.h_t
    assert np.max(np.abs(f.w[:, 1] - f.w[:, 0])) < 5 * h**2 * np.max(np.abs(f.w))
    assert shift_periodicity_check(cmc_005, which=0) < 5e-4


def test_uniqueness_up_to_constant(cmc_005, torsion_005):
    lam = torsion_005.grid.t_hi
    pert = lambda rho, t: 0.05 * np.cos(np.pi * t / lam) * (1 - rho**2)
    other = solve_cmc_limit(torsion_005, ACCEPTANCE_EPS, guess_perturbation=pert, check_periodicity=False)
    assert np.max(np.abs(other.w_limit - cmc_005.w_limit)) < 1e-8


def test_coarse_eps_list_flags_preasymptotic_growth(torsion_005):
    # with eps = 0.1 the successive differences first grow, then decay; the
    # strict Cauchy test reports this instead of extrapolating
    with pytest.raises(UnboundedSuspected):
        solve_cmc_limit(torsion_005, (0.1, 0.05, 0.025, 0.0125), check_periodicity=False)
