from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from serrinlab.cheeger import (
    Slab,
    _cylinder_stack_quotient,
    cheeger_quotient,
    one_laplacian_check,
    pixel_grid,
    subset_oracle,
    tv_objective,
    tv_relaxed_minimize,
    verify_calibration,
)
from serrinlab.errors import BadSlab, NotSerrin
from serrinlab.geometry import build_profile, generate_grid
from serrinlab.torsion import solve_torsion


@pytest.mark.parametrize("n,R", [(1, 1.0), (1, 2.5), (2, 1.0), (3, 0.7)])
def test_cylinder_quotient(n, R):
    d = build_profile(n, 1.3, [R])
    assert cheeger_quotient(d, Slab(0.0, 2.6)) == pytest.approx(n / R, rel=1e-12)


def test_bad_slab():
    d = build_profile(1, 1.3, [1.0])
    with pytest.raises(BadSlab):
        Slab(1.0, 1.0)
    with pytest.raises(BadSlab):
        cheeger_quotient(d, Slab(0.0, 2.0))
    assert Slab(-1.3, 2.6).periods(1.3) == 3


def test_slab_doubling_leaves_quotient(branch_n1):
    d = branch_n1[-1].domain
    lam = d.half_period
    q1 = cheeger_quotient(d, Slab(0.0, lam))
    q2 = cheeger_quotient(d, Slab(-lam, 3 * lam))
    assert abs(q1 - q2) < 1e-12


@pytest.mark.parametrize("n", [1, 2, 3])
def test_calibration_on_cylinder(n):
    d = build_profile(n, 1.5, [1.0])
    sol = solve_torsion(generate_grid(d, 64, 64))
    rep = verify_calibration(sol, Slab(0.0, 1.5))
    assert rep.identity_gap < 1e-12
    assert rep.calib_div_residual < 1e-8
    assert abs(rep.calib_sup - 1.0) < 1e-8
    assert rep.calib_wall_gap < 1e-10
    assert one_laplacian_check(rep)


def test_calibration_on_branch_point(refined_256):
    p = refined_256[0.1]
    sol = solve_torsion(generate_grid(p.domain, *p.grid))
    rep = verify_calibration(sol, Slab(0.0, p.domain.half_period))
    assert rep.identity_gap < 1e-6
    assert rep.calib_div_residual < 5e-4
    assert rep.calib_boundary_gap < 5e-4
    assert rep.calib_sup <= 1.0 + 1e-3
    assert one_laplacian_check(rep)


def test_calibration_rejects_wrong_fields():
    d = build_profile(1, 2.0, [1.0])
    sol = solve_torsion(generate_grid(d, 64, 64))
    slab = Slab(0.0, 2.0)
    ur, ut = sol.grad_u
    inflated = dataclasses.replace(sol, u=1.5 * sol.u, grad_u=(1.5 * ur, 1.5 * ut))
    assert not one_laplacian_check(verify_calibration(inflated, slab))
    wrong_beta = dataclasses.replace(sol, beta_mean=1.1 * sol.beta_mean)
    assert not one_laplacian_check(verify_calibration(wrong_beta, slab, serrin_tol=1.0))


def test_not_serrin_rejected():
    d = build_profile(1, 2.0, [1.0, 0.1])
    sol = solve_torsion(generate_grid(d, 64, 64))
    with pytest.raises(NotSerrin):
        verify_calibration(sol, Slab(0.0, 2.0))


def test_pixel_grid_volume():
    d = build_profile(2, 1.0, [1.0, 0.2])
    px = pixel_grid(d, Slab(0.0, 2.0), 64, 64)
    assert px.vol.sum() == pytest.approx(np.pi * px.r_edges[-1] ** 2 * 2.0, rel=1e-12)
    assert not px.inside[-4:].any()


def test_tv_objective_of_domain_indicator():
    d = build_profile(1, 2.0, [1.0])
    px = pixel_grid(d, Slab(0.0, 2.0), 64, 64)
    v = px.inside.astype(float)
    # lateral perimeter minus volume / beta, with beta = 1
    assert tv_objective(px, v, 1.0) == pytest.approx(2 * 2.0 - 2 * 2.0, abs=1e-12)
    assert tv_objective(px, np.zeros_like(v), 1.0) == 0.0


@pytest.mark.parametrize("n,lam", [(1, np.pi), (2, 2.0)])
def test_tv_on_cylinder(n, lam):
    d = build_profile(n, lam, [1.0])
    slab = Slab(0.0, lam)
    beta = 1.0 / n
    res = tv_relaxed_minimize(d, slab, beta, n_r=64, n_t=64)
    assert abs(res.value) < 2e-3
    heavy = tv_relaxed_minimize(d, slab, beta / 1.25, n_r=64, n_t=64)
    assert heavy.value < -0.1
    light = tv_relaxed_minimize(d, slab, beta * 1.25, n_r=64, n_t=64)
    assert abs(light.value) < 1e-9
    assert light.minimizer.max() == 0.0


def test_tv_on_branch_point(branch_n1):
    p = branch_n1[-1]
    slab = Slab(0.0, p.lam)
    res = tv_relaxed_minimize(p.domain, slab, p.beta, n_r=64, n_t=64)
    assert abs(res.value) < 2e-3
    assert tv_relaxed_minimize(p.domain, slab, p.beta / 1.25, n_r=64, n_t=64).value < -0.1


def test_subset_oracle_cylinder():
    d = build_profile(1, 2.0, [1.0])
    out = subset_oracle(d, Slab(0.0, 2.0))
    assert out["min"] == pytest.approx(out["quotient"], rel=1e-12)
    assert out["family_size"] > 1000
    # thinner slabs of radius cR have quotient 1/(cR); a half slab adds cut faces
    assert _cylinder_stack_quotient(1, np.full(4, 0.5), 0.5, False, False) == pytest.approx(2.0)
    assert _cylinder_stack_quotient(1, np.full(2, 1.0), 0.5, False, True) > 1.0


def test_subset_oracle_on_branch(branch_n1):
    d = branch_n1[-1].domain
    out = subset_oracle(d, Slab(0.0, d.half_period))
    assert out["min"] >= out["quotient"] - 1e-12
