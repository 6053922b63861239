"""Relative Cheeger quotient and calibration certificate of a periodic profile domain.

The candidate calibration is ``xi = ∇u / beta`` built from the torsion
function.  It is sub-unit, has constant divergence ``-1/beta``, meets the
lateral boundary with ``xi·nu = -1`` and is tangent to the slab walls;
together these bound ``P(A, S) >= |A| / beta`` for every ``A`` in the slab.
Minimality of ``Omega ∩ S`` is also probed directly by a relaxed total
variation minimization and by enumerating simple competitor sets.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BadSlab, NonConvergence, NotSerrin
from .geometry import (
    ProfileDomain,
    lateral_perimeter_in_slab,
    unit_ball_volume,
    unit_sphere_area,
    volume_in_slab,
)
from .operators import nodal_gradient, weighted_divergence
from .torsion import TorsionSolution, normal_derivative_onesided, serrin_residual

log = logging.getLogger(__name__)

SERRIN_TOL = 1e-6
_trapz = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class Slab:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise BadSlab(f"slab needs a < b, got ({self.a}, {self.b})")

    def periods(self, lam: float) -> int:
        """Number of half-periods spanned; ``BadSlab`` unless both ends lie in ``lam * Z``."""
        ka, kb = self.a / lam, self.b / lam
        for k, e in ((ka, self.a), (kb, self.b)):
            if abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
                raise BadSlab(f"slab endpoint {e} is not a multiple of lambda = {lam}")
        return int(round(kb) - round(ka))


def cheeger_quotient(d: ProfileDomain, slab: Slab) -> float:
    """``P(Omega, S) / |Omega ∩ S|`` with only the lateral boundary counted."""
    p = slab.periods(d.half_period)
    return lateral_perimeter_in_slab(d, p) / volume_in_slab(d, p)


@dataclass
class CheegerCalibrationReport:
    volume: float
    perimeter: float
    quotient: float
    beta: float
    identity_gap: float
    calib_sup: float
    calib_div_residual: float
    calib_boundary_gap: float
    calib_wall_gap: float
    serrin_residual: float
    tv_min_value: float = float("nan")
    subset_oracle_min: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def verify_calibration(sol: TorsionSolution, slab: Slab, serrin_tol: float = SERRIN_TOL) -> CheegerCalibrationReport:
    """Evaluate the calibration conditions of ``xi = ∇u / beta`` on the grid of ``sol``.

    The field is periodic, so one symmetry cell represents every slab.
    Divergence uses centered differences of the nodal field on interior
    nodes; the boundary and wall tests use one-sided differences so that
    neither is implied by the way ``u`` was computed.
    """
    d = sol.grid.profile
    res = float(np.max(np.abs(serrin_residual(sol))))
    if res > serrin_tol:
        raise NotSerrin(f"serrin residual {res:.3e} exceeds {serrin_tol:.1e}")
    p = slab.periods(d.half_period)
    beta = sol.beta_mean
    grid = sol.grid
    u_r, u_t = sol.grad_u
    xi_r, xi_t = u_r / beta, u_t / beta
    div = weighted_divergence(grid, xi_r, xi_t)
    _, u_t_walls = nodal_gradient(grid, sol.u, walls_symmetric=False)
    vol = volume_in_slab(d, p)
    per = lateral_perimeter_in_slab(d, p)
    q = per / vol
    return CheegerCalibrationReport(
        volume=vol,
        perimeter=per,
        quotient=q,
        beta=beta,
        identity_gap=abs(q - 1.0 / beta),
        calib_sup=float(np.max(np.hypot(xi_r, xi_t))),
        calib_div_residual=float(np.max(np.abs(div[:-1] + 1.0 / beta))),
        calib_boundary_gap=float(np.max(np.abs(normal_derivative_onesided(sol) / beta + 1.0))),
        calib_wall_gap=float(np.max(np.abs(u_t_walls[:, [0, -1]] / beta))),
        serrin_residual=res,
    )


def one_laplacian_check(
    report: CheegerCalibrationReport, tol_sup: float = 1e-3, tol_div: float = 5e-4, tol_bdy: float = 5e-4
) -> bool:
    """The calibration pair certifies the 1-Laplacian equation within the given tolerances."""
    return bool(
        report.calib_sup <= 1.0 + tol_sup
        and report.calib_div_residual <= tol_div
        and report.calib_boundary_gap <= tol_bdy
    )


# --- relaxed total variation ------------------------------------------------


@dataclass
class PixelSet:
    """Cell-centred Cartesian grid in ``(r, t)`` covering ``Omega ∩ S`` with weights of the axial reduction."""

    r_edges: np.ndarray
    t_edges: np.ndarray
    inside: np.ndarray  # (n_r, n_t) bool, cell centre in Omega
    vol: np.ndarray  # (n_r, n_t) cell volumes in R^n x R
    face_w: np.ndarray  # (n_r,) sigma * r^(n-1) at the outer face of each radial cell

    @property
    def h(self) -> tuple[float, float]:
        return self.r_edges[1] - self.r_edges[0], self.t_edges[1] - self.t_edges[0]


def pixel_grid(d: ProfileDomain, slab: Slab, n_r: int, n_t: int, margin_cells: int = 4) -> PixelSet:
    """Cartesian cells with ``max phi`` on a cell face and ``margin_cells`` empty columns beyond it."""
    p = slab.periods(d.half_period)
    t_fine = np.linspace(0.0, d.half_period, 4097)
    top = float(np.max(d.phi(t_fine)))
    hr = top / (n_r - margin_cells)
    r_edges = hr * np.arange(n_r + 1)
    t_edges = np.linspace(slab.a, slab.a + p * d.half_period, n_t + 1)
    rc = 0.5 * (r_edges[1:] + r_edges[:-1])
    tc = 0.5 * (t_edges[1:] + t_edges[:-1])
    inside = rc[:, None] < d.phi(tc)[None, :]
    n = d.n
    shell = unit_ball_volume(n) * (r_edges[1:] ** n - r_edges[:-1] ** n)
    vol = np.outer(shell, np.diff(t_edges))
    face_w = unit_sphere_area(n) * r_edges[1:] ** (n - 1)
    return PixelSet(r_edges, t_edges, inside, vol, face_w)


def _grad(v, hr, ht):
    # forward differences; zero across the last radial face (outside Omega anyway) and across slab walls
    gr = np.zeros_like(v)
    gt = np.zeros_like(v)
    gr[:-1] = (v[1:] - v[:-1]) / hr
    gt[:, :-1] = (v[:, 1:] - v[:, :-1]) / ht
    return gr, gt


def _grad_adj(pr, pt, hr, ht):
    out = np.zeros_like(pr)
    out[:-1] -= pr[:-1] / hr
    out[1:] += pr[:-1] / hr
    out[:, :-1] -= pt[:, :-1] / ht
    out[:, 1:] += pt[:, :-1] / ht
    return out


def tv_objective(px: PixelSet, v: np.ndarray, beta: float) -> float:
    """``TV_S(v) - (1/beta) ∫ v`` with isotropic cell gradients and wall faces ignored."""
    hr, ht = px.h
    gr, gt = _grad(v, hr, ht)
    w = px.face_w[:, None] * hr * ht
    return float(np.sum(w * np.hypot(gr, gt)) - np.sum(px.vol * v) / beta)


@dataclass
class TVResult:
    value: float
    minimizer: np.ndarray
    gap: float
    iterations: int
    pixels: PixelSet


def tv_relaxed_minimize(
    d: ProfileDomain,
    slab: Slab,
    beta: float,
    n_r: int = 128,
    n_t: int = 128,
    tol: float = 1e-4,
    max_iter: int = 60000,
    restart: int = 1000,
    primal_weight: float = 0.3,
) -> TVResult:
    """Minimize ``TV_S(v) - (1/beta) ∫ v`` over ``0 <= v <= 1``, ``v = 0`` off ``Omega``.

    Chambolle-Pock iterations from ``v = 1_Omega`` and zero dual, restarted
    from the running averages every ``restart`` steps (the problem is
    degenerate at the critical ``beta`` and plain iterates drift).  At each
    restart the averaged ``v`` and its superlevel sets are evaluated; the
    best value is an upper bound, the dual objective a lower bound.  Stops
    when they are within ``tol`` times the slab perimeter of ``Omega``.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    px = pixel_grid(d, slab, n_r, n_t)
    hr, ht = px.h
    # everything divided by the cell area so the operator is the plain forward gradient
    W = np.broadcast_to(px.face_w[:, None], px.inside.shape)
    f = px.vol / (hr * ht) / beta
    mask = px.inside
    L = np.sqrt(4.0 / hr**2 + 4.0 / ht**2)
    tau = 0.99 / (L * primal_weight)
    sigma = 0.99 * primal_weight / L
    v = mask.astype(float)
    pr = np.zeros_like(v)
    pt = np.zeros_like(v)
    scale = lateral_perimeter_in_slab(d, slab.periods(d.half_period))

    def dual_value(pr, pt):
        return -float(np.sum(np.maximum(0.0, f - _grad_adj(pr, pt, hr, ht))[mask])) * hr * ht

    best_v = v.copy()
    best = tv_objective(px, v, beta)
    lower = dual_value(pr, pt)
    sums = [np.zeros_like(v), np.zeros_like(v), np.zeros_like(v)]
    k = 0
    for it in range(1, max_iter + 1):
        v_old = v
        v = np.clip(v - tau * (_grad_adj(pr, pt, hr, ht) - f), 0.0, 1.0)
        v[~mask] = 0.0
        gr, gt = _grad(2.0 * v - v_old, hr, ht)
        pr = pr + sigma * gr
        pt = pt + sigma * gt
        norm = np.hypot(pr, pt)
        shrink = np.where(norm > W, W / np.maximum(norm, 1e-300), 1.0)
        pr *= shrink
        pt *= shrink
        for acc, x in zip(sums, (v, pr, pt)):
            acc += x
        k += 1
        if k < restart:
            continue
        v, pr, pt = (acc / k for acc in sums)
        for acc in sums:
            acc[:] = 0.0
        k = 0
        lower = max(lower, dual_value(pr, pt))
        for cand in _level_sets(v):
            val = tv_objective(px, cand, beta)
            if val < best:
                best, best_v = val, cand
        log.debug("tv it=%d upper=%.3e lower=%.3e", it, best, lower)
        if best - lower <= tol * scale:
            return TVResult(best, best_v, best - lower, it, px)
    raise NonConvergence(
        f"primal-dual gap {best - lower:.3e} after {max_iter} iterations (target {tol * scale:.3e})"
    )


def _level_sets(v: np.ndarray, count: int = 16):
    yield v
    for s in np.linspace(0.0, 1.0, count + 1)[:-1]:
        yield (v > s).astype(float)
    yield np.zeros_like(v)


# --- enumerated competitors --------------------------------------------------


def _cylinder_stack_quotient(n, radii, dt, cut_lo, cut_hi):
    """Quotient of ``{r < radii[j]}`` on consecutive t-intervals of width ``dt``; step faces counted."""
    radii = np.asarray(radii, dtype=float)
    wb, ws = unit_ball_volume(n), unit_sphere_area(n)
    vol = wb * np.sum(radii**n) * dt
    if vol <= 0:
        return np.inf
    per = ws * np.sum(radii ** (n - 1) * (radii > 0)) * dt
    per += wb * np.sum(np.abs(np.diff(radii**n)))
    if cut_lo:
        per += wb * radii[0] ** n
    if cut_hi:
        per += wb * radii[-1] ** n
    return per / vol


def _truncation_quotient(d, c, t0, t1, cut_lo, cut_hi, samples=2049):
    t = np.linspace(t0, t1, samples)
    phi = d.phi(t)
    dphi = d.dphi(t)
    psi = np.minimum(phi, c)
    lat = np.where(phi < c, phi ** (d.n - 1) * np.sqrt(1 + dphi**2), c ** (d.n - 1))
    wb, ws = unit_ball_volume(d.n), unit_sphere_area(d.n)
    vol = wb * _trapz(psi**d.n, t)
    per = ws * _trapz(lat, t)
    per += wb * (psi[0] ** d.n * cut_lo + psi[-1] ** d.n * cut_hi)
    return per / vol


def subset_oracle(d: ProfileDomain, slab: Slab, max_cells: int = 64, levels: int = 8) -> dict:
    """Smallest quotient over a finite family of subsets of ``Omega ∩ S``.

    The family has three parts, all inside ``Omega``: axis-centred
    sub-cylinders and annuli on t-windows made of whole cells, truncations
    ``{r < min(phi, c)}`` of the domain on those windows, and cell unions
    ``{r < psi(t)}`` with ``psi`` a monotone staircase.  Cut faces inside
    the slab are counted, slab walls are not.  Returns the minimum and the
    family size.
    """
    p = slab.periods(d.half_period)
    lam = d.half_period
    n_t = max(2, min(max_cells // levels, 8))
    edges = np.linspace(0.0, p * lam, n_t + 1)
    dt = edges[1] - edges[0]
    tf = np.linspace(0.0, lam, 4097)
    phi_min = float(np.min(d.phi(tf)))
    phi_max = float(np.max(d.phi(tf)))
    # lowest phi over each t-cell bounds the admissible radius there
    cell_min = np.array([float(np.min(d.phi(np.linspace(a, b, 65)))) for a, b in zip(edges[:-1], edges[1:])])
    wb, ws = unit_ball_volume(d.n), unit_sphere_area(d.n)
    best = np.inf
    count = 0
    radii = phi_min * np.arange(1, levels + 1) / levels
    for j0 in range(n_t):
        for j1 in range(j0 + 1, n_t + 1):
            cut_lo, cut_hi = j0 > 0, j1 < n_t
            for c in radii:
                q = _cylinder_stack_quotient(d.n, np.full(j1 - j0, c), dt, cut_lo, cut_hi)
                best, count = min(best, q), count + 1
                for c_in in radii[radii < c]:
                    # annulus c_in < r < c: inner lateral surface is counted too
                    L = (j1 - j0) * dt
                    vol = wb * (c**d.n - c_in**d.n) * L
                    per = ws * (c ** (d.n - 1) + c_in ** (d.n - 1)) * L
                    per += wb * (c**d.n - c_in**d.n) * (cut_lo + cut_hi)
                    best, count = min(best, per / vol), count + 1
            for c in np.linspace(phi_min, phi_max, levels + 1)[1:]:
                q = _truncation_quotient(d, c, edges[j0], edges[j1], cut_lo, cut_hi)
                best, count = min(best, q), count + 1
    # monotone staircases: psi nondecreasing or nonincreasing in t, capped by the cell minimum of phi
    grid_r = phi_max * np.arange(0, levels + 1) / levels
    for combo in itertools.combinations_with_replacement(range(levels + 1), n_t):
        for order in (combo, combo[::-1]):
            psi = grid_r[list(order)]
            psi = np.minimum(psi, cell_min)
            if np.all(psi == 0):
                continue
            q = _cylinder_stack_quotient(d.n, psi, dt, False, False)
            best, count = min(best, q), count + 1
    return {"min": float(best), "family_size": count, "quotient": cheeger_quotient(d, slab)}

