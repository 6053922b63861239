"""Constant mean curvature graphs over periodic Serrin domains.

For each ``eps`` the graph ``w`` minimizes

    G(w) = ∫ sqrt(1 + |∇w|^2) - (1/beta) ∫ w

over functions vanishing on the inner parallel surface at distance ``eps``
(the shrunk lateral boundary); the walls ``t = 0, lam`` and the axis carry
the natural zero-flux condition.  Letting ``eps -> 0`` and tracking the
boundary flux ``q = -(∇w·η)/sqrt(1+|∇w|^2)`` exhibits vertical contact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from .errors import CEpsNonPositive, NewtonStagnation, SingularGrid, UnboundedSuspected
from .geometry import MappedGrid, ParallelProfile, ProfileDomain
from .operators import QuadOps, boundary_nodes, mean_curvature
from .torsion import TorsionSolution, gradient_bound_margin, solve_torsion

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
COMPACT_RHO = 0.9
# successive eps-differences below CAUCHY_FLOOR, or below the O(h^2)
# discretization level h_rho^2 * max|w|, are treated as converged, not growing
CAUCHY_FLOOR = 1e-6


class GraphEnergy:
    """Discrete ``G`` on a mapped grid with ``w = 0`` on ``rho = rho_max``."""

    def __init__(self, grid: MappedGrid, beta: float):
        self.grid = grid
        self.beta = beta
        self.ops = QuadOps(grid)
        self.bnd = boundary_nodes(grid)
        self.free = np.ones(grid.shape[0] * grid.shape[1], dtype=bool)
        self.free[self.bnd] = False
        self.load = self.ops.nodal_volume / beta

    def value(self, w: np.ndarray) -> float:
        area = sum(float(np.dot(W, np.sqrt(1.0 + gr * gr + gt * gt))) for W, gr, gt, _ in self.ops.gradients(w))
        return area - float(np.dot(self.load, np.ravel(w)))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        g = -self.load.copy()
        for W, gr, gt, q in self.ops.gradients(w):
            s = W / np.sqrt(1.0 + gr * gr + gt * gt)
            g += q.grad_r.T @ (s * gr) + q.grad_t.T @ (s * gt)
        return g

    def hessian(self, w: np.ndarray) -> sp.csr_matrix:
        H = None
        for W, gr, gt, q in self.ops.gradients(w):
            s3 = W / (1.0 + gr * gr + gt * gt) ** 1.5
            term = (
                q.grad_r.T @ sp.diags(s3 * (1.0 + gt * gt)) @ q.grad_r
                + q.grad_t.T @ sp.diags(s3 * (1.0 + gr * gr)) @ q.grad_t
                - q.grad_r.T @ sp.diags(s3 * gr * gt) @ q.grad_t
                - q.grad_t.T @ sp.diags(s3 * gr * gt) @ q.grad_r
            )
            H = term if H is None else H + term
        return H.tocsr()

    def pointwise_residual(self, grad: np.ndarray) -> np.ndarray:
        """Gradient divided by dual-cell volumes: the curvature-equation defect per node."""
        return grad[self.free] / self.ops.nodal_volume[self.free]


@dataclass
class EpsSolution:
    eps: float
    grid: MappedGrid
    w: np.ndarray  # nodal, normalized to min = 0
    contact: np.ndarray  # q at boundary nodes
    newton_iters: int
    residual: float
    energy_history: list[float] = field(default_factory=list)


def minimize_graph_energy(
    grid: MappedGrid, beta: float, w0: np.ndarray, tol: float = NEWTON_TOL, max_iter: int = 100
) -> tuple[np.ndarray, dict]:
    """Damped Newton with Armijo backtracking on the discrete energy."""
    E = GraphEnergy(grid, beta)
    w = np.ravel(np.array(w0, dtype=float))
    w[E.bnd] = 0.0
    free = E.free
    G = E.value(w)
    history = [G]
    res_hist = []
    for it in range(max_iter + 1):
        g = E.gradient(w)
        res = float(np.max(np.abs(E.pointwise_residual(g))))
        res_hist.append(res)
        if res <= tol:
            break
        if it == max_iter:
            raise NewtonStagnation(
                f"no convergence in {max_iter} Newton steps (residual {res:.3e})",
                {"residuals": res_hist, "energies": history},
            )
        H = E.hessian(w)[free][:, free]
        step = np.zeros_like(w)
        step[free] = -spla.spsolve(H.tocsc(), g[free])
        slope = float(np.dot(g, step))
        if slope >= 0.0:
            raise NewtonStagnation("Newton direction is not a descent direction", {"residuals": res_hist})
        alpha = 1.0
        # a predicted decrease below the rounding level of G cannot be tested: take the full step
        resolvable = -slope > 1e-13 * max(1.0, abs(G))
        while True:
            trial = w + alpha * step
            Gt = E.value(trial)
            if not resolvable or Gt <= G + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 1e-12:
                raise NewtonStagnation(
                    f"line search failed at residual {res:.3e}", {"residuals": res_hist, "energies": history}
                )
        if np.max(np.abs(alpha * step)) < 1e-15 * max(1.0, np.max(np.abs(w))) and res > 1e3 * tol:
            raise NewtonStagnation(f"Newton step vanished at residual {res:.3e}", {"residuals": res_hist})
        w, G = trial, Gt
        history.append(G)
    contact = -g[E.bnd] / grid.boundary_measure()
    info = {
        "newton_iters": it,
        "residual": res_hist[-1],
        "residuals": res_hist,
        "energies": history,
        "zero_energy": E.value(np.zeros_like(w)),
        "contact": contact,
    }
    return w.reshape(grid.shape), info


def shrunk_grid(profile: ProfileDomain, eps: float, n_rho: int, n_t: int, t_hi: float | None = None) -> MappedGrid:
    return MappedGrid(ParallelProfile(profile, eps), n_rho, n_t, t_hi=t_hi)


def solve_cmc_eps(
    sol: TorsionSolution,
    eps: float,
    n_rho: int | None = None,
    n_t: int | None = None,
    initial: np.ndarray | None = None,
    beta: float | None = None,
    t_hi: float | None = None,
    tol: float = NEWTON_TOL,
) -> EpsSolution:
    """Graph of constant mean curvature ``1/beta`` on the ``eps``-shrunk cell.

    ``initial`` is a nodal guess on the shrunk grid (mapped coordinates); by
    default the torsion function of the shrunk cell divided by ``beta``,
    which is the solution of the linearized equation.
    """
    if not eps > 0:
        raise CEpsNonPositive(f"eps must be positive, got {eps}")
    c_eps = gradient_bound_margin(sol, eps)
    if not c_eps > 0:
        raise CEpsNonPositive(f"c_eps = {c_eps:.3e} <= 0 at eps = {eps}")
    profile = sol.grid.profile
    beta = sol.beta_mean if beta is None else beta
    n_rho = sol.grid.n_rho if n_rho is None else n_rho
    n_t = sol.grid.n_t if n_t is None else n_t
    try:
        grid = shrunk_grid(profile, eps, n_rho, n_t, t_hi)
    except SingularGrid as exc:
        raise CEpsNonPositive(str(exc)) from exc
    if initial is None:
        initial = solve_torsion(grid).u / beta
    w, info = minimize_graph_energy(grid, beta, initial, tol=tol)
    log.debug("eps=%g newton=%d residual=%.2e", eps, info["newton_iters"], info["residual"])
    return EpsSolution(
        eps=float(eps),
        grid=grid,
        w=w - w.min(),
        contact=info["contact"],
        newton_iters=info["newton_iters"],
        residual=info["residual"],
        energy_history=info["energies"] + [info["zero_energy"]],
    )


def curvature_residual_field(grid: MappedGrid, w: np.ndarray, beta: float, walls_symmetric: bool = True) -> np.ndarray:
    """``-div(∇w / sqrt(1+|∇w|^2)) - 1/beta`` by centered (staggered) differences.

    The outermost ``rho`` line has no outer neighbour and is ``nan``.
    """
    return -mean_curvature(grid, w, walls_symmetric) - 1.0 / beta


def compact_grid(profile: ProfileDomain, eps_max: float, n_rho: int, n_t: int) -> tuple[MappedGrid, int]:
    """Common interior grid ``{rho <= rho_c}`` plus one halo line, inside every shrunk cell.

    ``rho_c`` is ``COMPACT_RHO`` unless the ``eps_max``-shrunk cell is
    thinner than that somewhere, in which case it is reduced to fit.
    Returns the grid and the index of the last line with ``rho <= rho_c``.
    """
    t = np.linspace(0.0, profile.half_period, 1025)
    ratio = float(np.min(ParallelProfile(profile, eps_max).phi(t) / profile.phi(t)))
    n_c = max(8, int(round(COMPACT_RHO * n_rho)))
    rho_c = min(COMPACT_RHO, ratio * (1.0 - 1.0 / n_rho) * n_c / (n_c + 1))
    grid = MappedGrid(profile, n_c + 1, n_t, rho_max=rho_c * (n_c + 1) / n_c)
    return grid, n_c


def restrict_to_compact(field: EpsSolution, compact: MappedGrid) -> np.ndarray:
    """Interpolate an eps-field onto the common compact grid along each ``t``-line."""
    out = np.empty(compact.shape)
    r_src = field.grid.r
    r_dst = compact.r
    for j in range(compact.n_t + 1):
        spline = CubicSpline(r_src[:, j], field.w[:, j], bc_type=((1, 0.0), "not-a-knot"))
        out[:, j] = spline(r_dst[:, j])
    return out


@dataclass
class CMCSolution:
    beta: float
    eps_sequence: list[float]
    w_fields: list[EpsSolution]
    compact_grid: MappedGrid
    w_restricted: list[np.ndarray]
    w_limit: np.ndarray
    cauchy_differences: list[float]
    curvature_residual: float
    periodicity_residual: float
    bounded: bool
    profile: ProfileDomain = None

    @property
    def contact_profile(self) -> Callable:
        return lambda t, eps: contact_at(self, t, eps)

    def contact_table(self) -> dict[float, np.ndarray]:
        return {f.eps: f.contact for f in self.w_fields}


def contact_at(c: CMCSolution, t, eps: float):
    for f in c.w_fields:
        if abs(f.eps - eps) <= 1e-12 * max(1.0, eps):
            lam = f.grid.t_hi
            tt = np.mod(np.asarray(t, dtype=float), 2 * lam)
            tt = np.where(tt > lam, 2 * lam - tt, tt)
            return CubicSpline(f.grid.t, f.contact, bc_type=((1, 0.0), (1, 0.0)))(tt)
    raise KeyError(f"eps={eps} was not solved")


def _anchor(w: np.ndarray) -> np.ndarray:
    return w - np.mean(w)


def solve_cmc_limit(
    sol: TorsionSolution,
    eps_list: Sequence[float],
    n_rho: int | None = None,
    n_t: int | None = None,
    guess_perturbation: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    check_periodicity: bool = True,
) -> CMCSolution:
    """Solve the eps-problems in order, then pass to the limit on ``{rho <= 0.9}``.

    The compact region shrinks below ``rho = 0.9`` only when the largest
    ``eps`` cell does not contain it.

    ``guess_perturbation(rho, t)`` is added to the initial guess of the first
    (largest) eps; any admissible choice must lead to the same limit.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 2 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError(f"eps_list must be strictly decreasing with at least two entries, got {eps_list}")
    profile = sol.grid.profile
    beta = sol.beta_mean
    n_rho = sol.grid.n_rho if n_rho is None else n_rho
    n_t = sol.grid.n_t if n_t is None else n_t

    fields: list[EpsSolution] = []
    guess = None
    for k, eps in enumerate(eps_list):
        if k == 0:
            g0 = shrunk_grid(profile, eps, n_rho, n_t)
            guess = solve_torsion(g0).u / beta
            if guess_perturbation is not None:
                rho, t = np.meshgrid(g0.rho, g0.t, indexing="ij")
                guess = guess + guess_perturbation(rho, t)
        f = solve_cmc_eps(sol, eps, n_rho, n_t, initial=guess)
        fields.append(f)
        guess = f.w - f.w[-1, 0]

    compact, n_c = compact_grid(profile, eps_list[0], n_rho, n_t)
    restricted = [_anchor(restrict_to_compact(f, compact)) for f in fields]
    diffs = [float(np.max(np.abs(b - a))) for a, b in zip(restricted, restricted[1:])]
    floor = max(CAUCHY_FLOOR, float(np.max(np.abs(fields[-1].w))) / n_rho**2)
    bounded = all(np.isfinite(diffs)) and all(d1 <= max(d0, floor) for d0, d1 in zip(diffs, diffs[1:]))
    if not bounded:
        raise UnboundedSuspected(f"successive eps-differences grow: {diffs}")
    e1, e0 = eps_list[-1], eps_list[-2]
    w_lim = restricted[-1] + (restricted[-1] - restricted[-2]) * e1 / (e0 - e1)
    curv = float(np.max(np.abs(curvature_residual_field(compact, w_lim, beta)[: n_c + 1])))

    c = CMCSolution(
        beta=beta,
        eps_sequence=eps_list,
        w_fields=fields,
        compact_grid=compact,
        w_restricted=restricted,
        w_limit=w_lim,
        cauchy_differences=diffs,
        curvature_residual=curv,
        periodicity_residual=float("nan"),
        bounded=bounded,
        profile=profile,
    )
    if check_periodicity:
        c.periodicity_residual = shift_periodicity_check(c)
    return c


def periodize(f: EpsSolution, t_query: np.ndarray) -> np.ndarray:
    """Extend a symmetry-cell field to arbitrary ``t`` nodes by reflection and ``2*lam`` translation.

    ``t_query`` must lie on the cell's node lattice.
    """
    lam = f.grid.t_hi
    h = f.grid.h_t
    tt = np.mod(t_query, 2 * lam)
    tt = np.where(tt > lam, 2 * lam - tt, tt)
    j = np.rint(tt / h).astype(int)
    if np.max(np.abs(j * h - tt)) > 1e-9 * lam:
        raise ValueError("query points are not on the node lattice")
    return f.w[:, j]


def shift_periodicity_check(c: CMCSolution, which: int = -1) -> float:
    """Compare the periodized eps-field with a direct solve on two period cells ``(0, 4*lam)``.

    Both fields are matched at the axis point of the first cell's midpoint
    ``t = lam`` before taking the max difference.
    """
    f = c.w_fields[which]
    lam = f.grid.t_hi
    n_rho, n_t = f.grid.n_rho, f.grid.n_t
    grid2 = shrunk_grid(c.profile, f.eps, n_rho, 4 * n_t, t_hi=4 * lam)
    w2, _ = minimize_graph_energy(grid2, c.beta, solve_torsion(grid2).u / c.beta)
    rebuilt = periodize(f, grid2.t)
    jm = n_t  # t = lam
    diff = (w2 - w2[0, jm]) - (rebuilt - rebuilt[0, jm])
    return float(np.max(np.abs(diff)))
