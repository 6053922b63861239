"""Discrete calculus on a :class:`~serrinlab.geometry.MappedGrid`.

Two independent toolkits live here:

* a variational (bilinear, 2x2 Gauss) discretization used by the solvers.
  Every discrete equation is the gradient of a discrete energy, so the
  assembled matrices are symmetric and boundary fluxes obey an exact
  discrete divergence theorem;
* pointwise centered differences used to *evaluate* gradients,
  divergences and curvature of nodal fields.  Symmetry walls (``t`` ends
  and the axis) are handled with parity ghosts; the axis term
  ``(n-1)/r * F_r`` is replaced by its limit ``(n-1) * dF_r/dr``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .geometry import MappedGrid, unit_sphere_area

_GAUSS = ((1.0 - 1.0 / np.sqrt(3.0)) / 2.0, (1.0 + 1.0 / np.sqrt(3.0)) / 2.0)


@dataclass(frozen=True)
class GaussPoint:
    grad_r: sp.csr_matrix  # cells x nodes
    grad_t: sp.csr_matrix
    value: sp.csr_matrix
    weight: np.ndarray  # cells
    weight_t: np.ndarray  # cells, weight of the t-t stiffness term


class QuadOps:
    """Per-Gauss-point gradient/value operators and quadrature weights."""

    def __init__(self, grid: MappedGrid):
        self.grid = grid
        nr, nt = grid.n_rho, grid.n_t
        hr, ht = grid.h_rho, grid.h_t
        n = grid.n
        ci, cj = np.meshgrid(np.arange(nr), np.arange(nt), indexing="ij")
        ci, cj = ci.ravel(), cj.ravel()
        ncell, nnode = nr * nt, (nr + 1) * (nt + 1)
        rows = np.repeat(np.arange(ncell), 4)
        corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
        cols = np.stack([(ci + a) * (nt + 1) + (cj + b) for a, b in corners], axis=1).ravel()
        sigma = unit_sphere_area(n)
        self.points: list[GaussPoint] = []
        for xi in _GAUSS:
            for eta in _GAUSS:
                val = np.array([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta])
                dxi = np.array([-(1 - eta), (1 - eta), -eta, eta]) / hr
                deta = np.array([-(1 - xi), -xi, (1 - xi), xi]) / ht
                rho_q = grid.rho[ci] + xi * hr
                rho_mid = grid.rho[ci] + 0.5 * hr
                tq_col = grid.t[:-1] + eta * ht
                phi_col = np.asarray(grid.profile.phi(tq_col), dtype=float)
                dphi_col = np.asarray(grid.profile.dphi(tq_col), dtype=float)
                phi_q, dphi_q = phi_col[cj], dphi_col[cj]
                shape = (ncell, nnode)
                v = sp.csr_matrix((np.tile(val, ncell), (rows, cols)), shape=shape)
                drho = sp.csr_matrix((np.tile(dxi, ncell), (rows, cols)), shape=shape)
                dt = sp.csr_matrix((np.tile(deta, ncell), (rows, cols)), shape=shape)
                g_r = sp.diags(1.0 / phi_q) @ drho
                g_t = dt - sp.diags(rho_q * dphi_q / phi_q) @ drho
                # radial weight frozen at the cell midpoint: the classical
                # axisymmetric flux form, exact on quadratic radial solutions.
                # The t-t term takes r^(n-1) at the Gauss point instead; the
                # midpoint value loses accuracy next to the axis when n >= 3.
                w = 0.25 * hr * ht * sigma * (rho_mid * phi_q) ** (n - 1) * phi_q
                w_t = 0.25 * hr * ht * sigma * (rho_q * phi_q) ** (n - 1) * phi_q
                self.points.append(GaussPoint(g_r.tocsr(), g_t.tocsr(), v, w, w_t))

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Matrix of ``int grad(u) . grad(v) r^(n-1)``."""
        A = None
        for q in self.points:
            term = q.grad_r.T @ sp.diags(q.weight) @ q.grad_r + q.grad_t.T @ sp.diags(q.weight_t) @ q.grad_t
            A = term if A is None else A + term
        return A.tocsr()

    @cached_property
    def nodal_volume(self) -> np.ndarray:
        """Dual-cell volumes ``|{r in node cell}|``: the load of the unit source.

        Radially exact; in ``t`` each half-interval uses 2-point Gauss.
        """
        g = self.grid
        n, hr, ht = g.n, g.h_rho, g.h_t
        edges = np.clip(np.concatenate([[0.0], g.rho[:-1] + 0.5 * hr, [g.rho[-1]]]), 0.0, g.rho[-1])
        radial = (edges[1:] ** n - edges[:-1] ** n) / n
        tv = np.zeros(g.n_t + 1)
        for eta in _GAUSS:
            lo = g.t[:-1] + 0.5 * ht * eta
            hi = g.t[:-1] + 0.5 * ht * (1.0 + eta)
            tv[:-1] += 0.25 * ht * np.asarray(g.profile.phi(lo), dtype=float) ** n
            tv[1:] += 0.25 * ht * np.asarray(g.profile.phi(hi), dtype=float) ** n
        return unit_sphere_area(n) * np.outer(radial, tv).ravel()

    def load(self, f_nodal: np.ndarray) -> np.ndarray:
        return self.nodal_volume * np.ravel(f_nodal)

    def gradients(self, u: np.ndarray):
        """Yield ``(weight, u_r, u_t, GaussPoint)`` at every Gauss point."""
        u = np.ravel(u)
        for q in self.points:
            yield q.weight, q.grad_r @ u, q.grad_t @ u, q

    def volume(self) -> float:
        return float(np.sum(self.nodal_volume))


def boundary_nodes(grid: MappedGrid) -> np.ndarray:
    """Flat indices of the lateral boundary ``rho = rho_max`` ordered by ``t``."""
    return grid.n_rho * (grid.n_t + 1) + np.arange(grid.n_t + 1)


def interior_mask(grid: MappedGrid) -> np.ndarray:
    m = np.ones(grid.shape, dtype=bool)
    m[-1, :] = False
    return m


# --- pointwise differences -------------------------------------------------


def _diff_rho(F: np.ndarray, h: float, axis_parity: int) -> np.ndarray:
    D = np.empty_like(F)
    D[1:-1] = (F[2:] - F[:-2]) / (2 * h)
    D[0] = (1 - axis_parity) * F[1] / (2 * h)
    D[-1] = (3 * F[-1] - 4 * F[-2] + F[-3]) / (2 * h)
    return D


def _diff_t(F: np.ndarray, h: float, parity: int | None) -> np.ndarray:
    D = np.empty_like(F)
    D[:, 1:-1] = (F[:, 2:] - F[:, :-2]) / (2 * h)
    if parity is None:
        D[:, 0] = (-3 * F[:, 0] + 4 * F[:, 1] - F[:, 2]) / (2 * h)
        D[:, -1] = (3 * F[:, -1] - 4 * F[:, -2] + F[:, -3]) / (2 * h)
    else:
        D[:, 0] = (1 - parity) * F[:, 1] / (2 * h)
        D[:, -1] = -(1 - parity) * F[:, -2] / (2 * h)
    return D


def _chain(grid: MappedGrid, F_rho: np.ndarray, F_t: np.ndarray):
    # (d/drho, d/dt) -> (d/dr, d/dt at fixed r)
    phi, dphi = grid.phi[None, :], grid.dphi[None, :]
    rho = grid.rho[:, None]
    return F_rho / phi, F_t - rho * dphi / phi * F_rho


def nodal_gradient(grid: MappedGrid, U: np.ndarray, walls_symmetric: bool = True):
    """Physical ``(u_r, u_t)`` of an even nodal field by centered differences."""
    U = np.reshape(U, grid.shape)
    U_rho = _diff_rho(U, grid.h_rho, +1)
    U_t = _diff_t(U, grid.h_t, +1 if walls_symmetric else None)
    return _chain(grid, U_rho, U_t)


def weighted_divergence(grid: MappedGrid, F_r: np.ndarray, F_t: np.ndarray, walls_symmetric: bool = True):
    """``r^(1-n) d_r(r^(n-1) F_r) + d_t F_t`` for a field with ``F_r`` odd at the
    axis and ``F_t`` odd across the walls."""
    n = grid.n
    F_r = np.reshape(F_r, grid.shape)
    F_t = np.reshape(F_t, grid.shape)
    dFr_dr, _ = _chain(grid, _diff_rho(F_r, grid.h_rho, -1), _diff_t(F_r, grid.h_t, +1 if walls_symmetric else None))
    Ft_rho = _diff_rho(F_t, grid.h_rho, +1)
    Ft_t = _diff_t(F_t, grid.h_t, -1 if walls_symmetric else None)
    _, dFt_dt = _chain(grid, Ft_rho, Ft_t)
    div = dFr_dr + dFt_dt
    if n > 1:
        r = grid.r
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = np.where(r > 0, (n - 1) * F_r / np.where(r > 0, r, 1.0), (n - 1) * dFr_dr)
        div = div + extra
    return div


def _rho_dual_volumes(rho: np.ndarray, n: int) -> np.ndarray:
    h = rho[1] - rho[0]
    lo = np.maximum(rho - 0.5 * h, 0.0)
    hi = rho + 0.5 * h
    return (hi**n - lo**n) / n


def mean_curvature(grid: MappedGrid, W: np.ndarray, walls_symmetric: bool = True) -> np.ndarray:
    """``div(∇w / sqrt(1+|∇w|^2))`` in compact conservative form.

    Fluxes live on the staggered half-points; each node's divergence is the
    net flux through its dual cell divided by the dual-cell volume, which
    handles the axis without a singular ``1/r``.  The outermost ``rho`` line
    has no outer neighbour and is returned as ``nan``.
    """
    n = grid.n
    W = np.reshape(W, grid.shape)
    hr, ht = grid.h_rho, grid.h_t
    prof = grid.profile
    rho = grid.rho
    phi, dphi = grid.phi, grid.dphi

    # centered derivatives at nodes, used for the transverse components
    W_t_node = _diff_t(W, ht, +1 if walls_symmetric else None)
    W_rho_node = _diff_rho(W, hr, +1)

    # rho-faces (i+1/2, j)
    rh = rho[:-1] + 0.5 * hr
    Wr = (W[1:] - W[:-1]) / hr
    Wt = 0.5 * (W_t_node[1:] + W_t_node[:-1])
    g_r = Wr / phi[None, :]
    g_t = Wt - rh[:, None] * dphi[None, :] / phi[None, :] * Wr
    s = np.sqrt(1.0 + g_r**2 + g_t**2)
    N_contra = g_r / s / phi[None, :] - rh[:, None] * dphi[None, :] / phi[None, :] * (g_t / s)
    # J * N^rho with J = rho^(n-1) phi^n; the phi^n factor cancels against the cell
    F_rho = rh[:, None] ** (n - 1) * N_contra

    # t-faces (i, j+1/2)
    th = grid.t[:-1] + 0.5 * ht
    ph = np.asarray(prof.phi(th), dtype=float)
    dph = np.asarray(prof.dphi(th), dtype=float)
    Wt2 = (W[:, 1:] - W[:, :-1]) / ht
    Wr2 = 0.5 * (W_rho_node[:, 1:] + W_rho_node[:, :-1])
    g_r2 = Wr2 / ph[None, :]
    g_t2 = Wt2 - rho[:, None] * dph[None, :] / ph[None, :] * Wr2
    s2 = np.sqrt(1.0 + g_r2**2 + g_t2**2)
    F_t = ph[None, :] ** n * (g_t2 / s2)

    vol = _rho_dual_volumes(rho, n)
    out = np.full(grid.shape, np.nan)
    # radial part: net flux over the dual cell; the axis face carries zero flux
    net_r = np.zeros((grid.n_rho, grid.n_t + 1))
    net_r[0] = F_rho[0]
    net_r[1:] = F_rho[1:] - F_rho[:-1]
    out[:-1] = net_r / vol[:-1, None]
    # t part
    div_t = np.empty((grid.n_rho + 1, grid.n_t + 1))
    div_t[:, 1:-1] = (F_t[:, 1:] - F_t[:, :-1]) / ht
    if walls_symmetric:
        div_t[:, 0] = 2.0 * F_t[:, 0] / ht
        div_t[:, -1] = -2.0 * F_t[:, -1] / ht
    else:
        div_t[:, 0] = div_t[:, 1]
        div_t[:, -1] = div_t[:, -2]
    out[:-1] += div_t[:-1] / phi[None, :] ** n
    return out
