"""Torsion function ``-Δu = 1, u = 0 on the lateral boundary`` on the symmetry cell.

Boundary normal derivatives are recovered from the residual of the Dirichlet
rows of the discrete system (the consistent boundary flux).  With this choice
``sum(flux) = -|Omega ∩ S|`` holds to rounding, which is the discrete form of
integrating ``-Δu = 1`` over the cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from .errors import SingularGrid, SolverDivergence
from .geometry import MappedGrid, ParallelProfile, ProfileDomain
from .operators import QuadOps, boundary_nodes, nodal_gradient

LINEAR_RTOL = 1e-12


def solve_spd(A, b, x0=None, rtol: float = LINEAR_RTOL, maxiter: int = 5000):
    """Conjugate gradients with a smoothed-aggregation preconditioner."""
    # pyamg estimates spectral radii from np.random vectors; fix them so runs repeat bit for bit
    state = np.random.get_state()
    np.random.seed(0)
    try:
        ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric", max_coarse=50)
    finally:
        np.random.set_state(state)
    x, info = spla.cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=ml.aspreconditioner())
    if info != 0:
        res = np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), 1e-300)
        raise SolverDivergence(f"CG stalled after {maxiter} iterations, relative residual {res:.3e}")
    return x


@dataclass
class TorsionSolution:
    grid: MappedGrid
    u: np.ndarray
    grad_u: tuple[np.ndarray, np.ndarray]
    boundary_flux: np.ndarray  # integrated d_nu u per boundary node
    dnu: np.ndarray  # pointwise d_nu u at boundary nodes
    beta_mean: float
    sup_grad_interior: float
    volume: float = field(default=np.nan)

    @property
    def normal_derivative(self):
        return normal_derivative_profile(self)


def solve_torsion(grid: MappedGrid, source=None, rtol: float = LINEAR_RTOL) -> TorsionSolution:
    """Solve the radially reduced torsion problem on ``grid``.

    ``source`` (nodal array) replaces the unit right-hand side; it exists for
    manufactured-solution checks.
    """
    if not np.all(np.isfinite(grid.phi)) or np.min(grid.phi) <= 0.0:
        raise SingularGrid("degenerate profile on grid")
    ops = QuadOps(grid)
    A = ops.stiffness
    b = ops.nodal_volume if source is None else ops.load(source)
    B = boundary_nodes(grid)
    free = np.ones(A.shape[0], dtype=bool)
    free[B] = False
    u = np.zeros(A.shape[0])
    u[free] = solve_spd(A[free][:, free].tocsr(), b[free], rtol=rtol)
    flux = (A @ u - b)[B]
    measure = grid.boundary_measure()
    U = u.reshape(grid.shape)
    u_r, u_t = nodal_gradient(grid, U)
    g = np.hypot(u_r, u_t)
    return TorsionSolution(
        grid=grid,
        u=U,
        grad_u=(u_r, u_t),
        boundary_flux=flux,
        dnu=flux / measure,
        beta_mean=float(-flux.sum() / measure.sum()),
        sup_grad_interior=float(np.max(g[:-1, :])),
        volume=float(np.sum(b)) if source is None else ops.volume(),
    )


def _even_spline(t: np.ndarray, values: np.ndarray) -> CubicSpline:
    return CubicSpline(t, values, bc_type=((1, 0.0), (1, 0.0)))


def normal_derivative_profile(sol: TorsionSolution):
    """``t -> d_nu u(phi(t), t)`` interpolating the nodal boundary fluxes.

    ``t`` is folded into the symmetry cell by evenness and periodicity.
    """
    grid = sol.grid
    spline = _even_spline(grid.t, sol.dnu)
    lam = grid.profile.half_period

    def dnu(t):
        tt = np.mod(np.asarray(t, dtype=float), 2 * lam)
        tt = np.where(tt > lam, 2 * lam - tt, tt)
        out = spline(tt)
        return float(out) if np.ndim(out) == 0 else out

    return dnu


def normal_derivative_onesided(sol: TorsionSolution) -> np.ndarray:
    """Independent estimate of ``d_nu u`` from one-sided second-order differences at ``rho = 1``."""
    grid = sol.grid
    u_r, u_t = sol.grad_u
    nu_r, nu_t = grid.boundary_normal()
    return u_r[-1] * nu_r + u_t[-1] * nu_t


def serrin_residual(sol: TorsionSolution) -> np.ndarray:
    """``-d_nu u(t_j) - beta_mean`` at the boundary nodes."""
    return -sol.dnu - sol.beta_mean


def gradient_bound_margin(sol: TorsionSolution, eps: float) -> float:
    """``c_eps = 1 - sup_{Omega_eps} |grad u| / beta_mean``.

    ``Omega_eps`` is the set at distance more than ``eps`` from the lateral
    boundary.  Besides the grid nodes inside it, ``|grad u|`` is sampled on
    the inner parallel surface itself by spline interpolation along each
    ``t``-line, so the supremum is not limited by node spacing.
    """
    grid = sol.grid
    u_r, u_t = sol.grad_u
    g2 = u_r**2 + u_t**2
    if eps <= 0.0:
        return float(1.0 - np.sqrt(np.max(g2)) / sol.beta_mean)
    base = grid.profile
    if not isinstance(base, ProfileDomain):
        raise TypeError("gradient_bound_margin needs a torsion solution on a ProfileDomain grid")
    r_eps = np.asarray(ParallelProfile(base, eps).phi(grid.t))
    r = grid.r
    inside = r < r_eps[None, :]
    best = np.max(g2[inside]) if np.any(inside) else 0.0
    for j in range(grid.n_t + 1):
        spline = CubicSpline(r[:, j], g2[:, j])
        best = max(best, float(spline(r_eps[j])))
    return float(1.0 - np.sqrt(best) / sol.beta_mean)


def flux_volume_gap(sol: TorsionSolution) -> float:
    """``|-sum of boundary fluxes - |Omega ∩ S||`` with the volume from the profile quadrature."""
    from .geometry import volume_in_slab

    vol = volume_in_slab(sol.grid.profile, 1) if isinstance(sol.grid.profile, ProfileDomain) else sol.volume
    return float(abs(-np.sum(sol.boundary_flux) - vol))
