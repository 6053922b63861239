"""Numerical periodic Serrin domains bifurcating from the straight cylinder.

The unknowns of a profile ``phi = a_0 + sum a_k cos(k pi t / lam)`` are
``(a_2, ..., a_K, lam)``.  ``a_1 = s`` is pinned (it parametrizes the
branch) and so is ``a_0`` (the base radius): the residual map is invariant
under dilations, so one of ``a_0`` and ``lam`` must be fixed, and the
mode-0 projection of a mean-free residual vanishes identically.  The
equations are the cosine projections ``P_1, ..., P_K`` of
``g(t) = -d_nu u - beta_mean`` on the boundary.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import NewtonStagnation, NoBifurcationInRange, NonPositiveProfile
from .geometry import ProfileDomain, build_profile, generate_grid
from .torsion import TorsionSolution, serrin_residual, solve_torsion

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
FD_STEP = 1e-6
DEFAULT_GRID = (64, 64)


@dataclass(frozen=True)
class BranchPoint:
    s: float
    domain: ProfileDomain
    lam: float
    beta: float
    residual_norm: float
    newton_iters: int = 0
    grid: tuple[int, int] = DEFAULT_GRID

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "n": self.domain.n,
            "lambda": self.lam,
            "beta": self.beta,
            "coeffs": list(self.domain.cosine_coeffs),
            "residual_norm": self.residual_norm,
            "newton_iters": self.newton_iters,
            "grid": list(self.grid),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BranchPoint":
        d = build_profile(int(data["n"]), float(data["lambda"]), [float(a) for a in data["coeffs"]])
        return cls(
            s=float(data["s"]),
            domain=d,
            lam=d.half_period,
            beta=float(data["beta"]),
            residual_norm=float(data["residual_norm"]),
            newton_iters=int(data.get("newton_iters", 0)),
            grid=tuple(int(x) for x in data.get("grid", DEFAULT_GRID)),
        )


def _trapezoid(m: int) -> np.ndarray:
    w = np.full(m + 1, 1.0 / m)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def mode_projections(sol: TorsionSolution, K: int) -> np.ndarray:
    """``P_k = (2/lam) ∫_0^lam g(t) cos(k pi t/lam) dt`` for ``k = 1..K`` by the trapezoid rule."""
    grid = sol.grid
    g = serrin_residual(sol)
    w = 2.0 * _trapezoid(grid.n_t)
    k = np.arange(1, K + 1)
    C = np.cos(np.pi * np.outer(k, grid.t) / grid.profile.half_period)
    return C @ (w * g)


def _solve(d: ProfileDomain, grid: tuple[int, int]) -> TorsionSolution:
    return solve_torsion(generate_grid(d, *grid))


def mode1_response(n: int, radius: float, lam: float, grid: tuple[int, int] = DEFAULT_GRID, h: float = 1e-4) -> float:
    """Signed derivative ``dP_1/da_1`` at the cylinder of half-period ``lam`` (central differences).

    At the cylinder the linearized residual map is diagonal in the cosine
    modes, so the Jacobian loses invertibility on mode 1 exactly where this
    quantity changes sign.
    """
    vals = []
    for sgn in (1.0, -1.0):
        d = ProfileDomain(n, lam, (radius, sgn * h * radius))
        vals.append(mode_projections(_solve(d, grid), 1)[0])
    return (vals[0] - vals[1]) / (2.0 * h * radius)


def detect_bifurcation_period(
    n: int,
    base_radius: float,
    grid: tuple[int, int] = DEFAULT_GRID,
    window: tuple[float, float] = (0.3, 5.0),
    samples: int = 24,
    xtol: float = 1e-6,
) -> float:
    """Half-period ``lam*`` at which the cylinder of radius ``base_radius`` bifurcates.

    ``window`` is given in units of ``base_radius`` so that the scan, and
    hence the bisection sequence, is dilation covariant.
    """
    if not base_radius > 0:
        raise ValueError(f"base radius must be positive, got {base_radius}")
    return float(bifurcation_bracket(n, base_radius, grid, window, samples, xtol)[2])


def bifurcation_bracket(n, base_radius, grid=DEFAULT_GRID, window=(0.3, 5.0), samples=24, xtol=1e-6):
    """``(lo, hi, mid)`` with the mode-1 response changing sign on ``[lo, hi]``, ``hi - lo <= xtol``."""
    R = float(base_radius)
    lams = R * np.geomspace(window[0], window[1], samples)
    f = lambda lam: mode1_response(n, R, lam, grid)
    vals = [f(lam) for lam in lams]
    idx = [i for i in range(samples - 1) if np.sign(vals[i]) != np.sign(vals[i + 1])]
    if not idx:
        raise NoBifurcationInRange(
            f"mode-1 response keeps sign {np.sign(vals[0]):+.0f} on lam in [{lams[0]:.4g}, {lams[-1]:.4g}]"
        )
    i = idx[0]
    lo, hi, flo = lams[i], lams[i + 1], vals[i]
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            lo = hi = mid
            break
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return float(lo), float(hi), float(0.5 * (lo + hi))


def _profile(n, R, s, x) -> ProfileDomain:
    return build_profile(n, float(x[-1]), (R, s) + tuple(float(a) for a in x[:-1]))


def _residual_map(n, R, s, x, K, grid):
    sol = _solve(_profile(n, R, s, x), grid)
    return mode_projections(sol, K), sol


def newton_solve_profile(
    init: ProfileDomain,
    s: float,
    K: int = 8,
    grid: tuple[int, int] = DEFAULT_GRID,
    tol: float = RESIDUAL_TOL,
    max_iter: int = 30,
    workers: int = 1,
    min_iter: int = 0,
) -> BranchPoint:
    """Solve for ``(a_2..a_K, lam)`` with ``a_0 = init.a0`` and ``a_1 = s``.

    ``init`` supplies the starting coefficients and half-period; entries
    beyond ``K`` are dropped.  Converged when ``max |serrin_residual| <= tol``
    and at least ``min_iter`` steps were taken.
    """
    n, R = init.n, init.a0
    if abs(s) > 0.3 * R:
        raise ValueError(f"|s| = {abs(s)} exceeds 0.3 * a_0")
    c = list(init.cosine_coeffs[2 : K + 1]) + [0.0] * max(0, K + 1 - len(init.cosine_coeffs))
    x = np.array(c[: K - 1] + [init.half_period], dtype=float)
    history = []
    P, sol = _residual_map(n, R, s, x, K, grid)
    for it in range(max_iter + 1):
        res = float(np.max(np.abs(serrin_residual(sol))))
        history.append(res)
        log.debug("s=%g newton %d residual %.3e", s, it, res)
        if res <= tol and it >= min_iter:
            d = _profile(n, R, s, x)
            return BranchPoint(float(s), d, d.half_period, sol.beta_mean, res, it, tuple(grid))
        if it == max_iter:
            break
        J = _fd_jacobian(n, R, s, x, K, grid, P, workers)
        step = np.linalg.solve(J, -P)
        if np.linalg.norm(step) < 1e-14 * max(1.0, np.linalg.norm(x)) and res > tol:
            raise NewtonStagnation(f"Newton step vanished at residual {res:.3e}", {"s": s, "residuals": history})
        alpha = 1.0
        while True:
            try:
                trial = x + alpha * step
                Pt, solt = _residual_map(n, R, s, trial, K, grid)
                if np.linalg.norm(Pt) < np.linalg.norm(P) or alpha < 1e-3:
                    break
            except NonPositiveProfile:
                pass
            alpha *= 0.5
            if alpha < 1e-6:
                raise NewtonStagnation(f"line search failed at residual {res:.3e}", {"s": s, "residuals": history})
        x, P, sol = trial, Pt, solt
    raise NewtonStagnation(
        f"no convergence in {max_iter} Newton steps at s={s} (residual {history[-1]:.3e})",
        {"s": s, "residuals": history},
    )


def _fd_jacobian(n, R, s, x, K, grid, P0, workers=1):
    scale = np.full(len(x), R)
    scale[-1] = x[-1]

    def column(k):
        xp = x.copy()
        h = FD_STEP * scale[k]
        xp[k] += h
        return (_residual_map(n, R, s, xp, K, grid)[0] - P0) / h

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            cols = list(ex.map(column, range(len(x))))
    else:
        cols = [column(k) for k in range(len(x))]
    return np.column_stack(cols)


def cylinder_point(n: int, radius: float, lam: float, grid: tuple[int, int] = DEFAULT_GRID) -> BranchPoint:
    d = build_profile(n, lam, (radius,))
    sol = _solve(d, grid)
    return BranchPoint(0.0, d, lam, sol.beta_mean, float(np.max(np.abs(serrin_residual(sol)))), 0, tuple(grid))


def continue_branch(
    start: BranchPoint,
    s_max: float,
    ds: float,
    K: int = 8,
    tol: float = RESIDUAL_TOL,
    workers: int = 1,
) -> list[BranchPoint]:
    """Natural-parameter continuation from ``start`` to ``s_max`` in steps ``|ds|``.

    The predictor is the secant through the last two points (the previous
    point alone for the first step).  Errors carry the failing ``s``.
    """
    step = abs(ds) * (1.0 if s_max >= start.s else -1.0)
    if step == 0.0:
        raise ValueError("ds must be nonzero")
    count = int(np.floor(abs(s_max - start.s) / abs(ds) + 1e-9))
    targets = [start.s + step * (i + 1) for i in range(count)]
    points = [start]
    for s in targets:
        init = _predict(points, s, K)
        try:
            p = newton_solve_profile(init, s, K, start.grid, tol=tol, workers=workers)
        except NewtonStagnation as exc:
            exc.diagnostics["s"] = s
            raise
        points.append(p)
    return points


def _coeff_vector(p: BranchPoint, K: int) -> np.ndarray:
    c = np.zeros(K + 2)
    a = p.domain.cosine_coeffs[: K + 1]
    c[: len(a)] = a
    c[-1] = p.lam
    return c


def _predict(points: list[BranchPoint], s: float, K: int) -> ProfileDomain:
    last = points[-1]
    v = _coeff_vector(last, K)
    if len(points) >= 2 and points[-1].s != points[-2].s:
        prev = _coeff_vector(points[-2], K)
        v = v + (v - prev) * (s - last.s) / (last.s - points[-2].s)
    v[1] = s
    return ProfileDomain(last.domain.n, float(v[-1]), tuple(v[:-1]))


def mirror_point(p: BranchPoint) -> ProfileDomain:
    """Profile shifted by ``lam``: ``a_k -> (-1)^k a_k``, the same domain seen from ``t = lam``."""
    a = p.domain.cosine_coeffs
    return ProfileDomain(p.domain.n, p.lam, tuple(((-1) ** k) * c for k, c in enumerate(a)))


def truncation_report(p: BranchPoint, K: int, tol: float = RESIDUAL_TOL) -> dict:
    """Re-solve ``p`` with ``K`` and ``2K`` modes; report the largest coefficient and ``lam`` changes.

    Both solves take at least two Newton steps from ``p`` so that neither
    stops on the inherited iterate.
    """
    p = newton_solve_profile(p.domain, p.s, K, p.grid, tol=tol, min_iter=2)
    q = newton_solve_profile(p.domain, p.s, 2 * K, p.grid, tol=tol, min_iter=2)
    a = np.zeros(2 * K + 1)
    a[: len(p.domain.cosine_coeffs)] = p.domain.cosine_coeffs
    b = np.zeros(2 * K + 1)
    b[: len(q.domain.cosine_coeffs)] = q.domain.cosine_coeffs
    return {
        "K": K,
        "coeff_change": float(np.max(np.abs(a - b))),
        "lambda_change": abs(q.lam - p.lam),
        "residual_2K": q.residual_norm,
        "doubled": q,
    }


def refined_residual(p: BranchPoint, factor: int = 2) -> float:
    """``max |serrin_residual|`` of ``p.domain`` on a grid refined by ``factor``."""
    sol = _solve(p.domain, (p.grid[0] * factor, p.grid[1] * factor))
    return float(np.max(np.abs(serrin_residual(sol))))


def scaled_point(p: BranchPoint, c: float) -> BranchPoint:
    """Dilate a branch point by ``c`` and re-evaluate the residual on the same grid (no Newton)."""
    d = p.domain.scaled(c)
    sol = _solve(d, p.grid)
    return replace(
        p, s=p.s * c, domain=d, lam=d.half_period, beta=sol.beta_mean, residual_norm=float(np.max(np.abs(serrin_residual(sol))))
    )


def refine_point(p: BranchPoint, grid: tuple[int, int], K: int = 8, tol: float = RESIDUAL_TOL, max_iter: int = 20):
    """Re-converge ``p`` on a finer ``grid`` by chord iterations.

    The Jacobian is taken once on the coarse grid of ``p``; the discrete
    problems differ by ``O(h^2)`` so the chord iteration contracts quickly
    and each step costs a single fine-grid solve.
    """
    n, R, s = p.domain.n, p.domain.a0, p.s
    if s == 0.0:
        return replace(cylinder_point(n, R, p.lam, grid), s=p.s)
    c = list(p.domain.cosine_coeffs[2 : K + 1]) + [0.0] * max(0, K + 1 - len(p.domain.cosine_coeffs))
    x = np.array(c[: K - 1] + [p.lam], dtype=float)
    P0, _ = _residual_map(n, R, s, x, K, p.grid)
    J = _fd_jacobian(n, R, s, x, K, p.grid, P0)
    history = []
    for it in range(max_iter + 1):
        P, sol = _residual_map(n, R, s, x, K, grid)
        res = float(np.max(np.abs(serrin_residual(sol))))
        history.append(res)
        if res <= tol:
            d = _profile(n, R, s, x)
            return BranchPoint(float(s), d, d.half_period, sol.beta_mean, res, it, tuple(grid))
        x = x + np.linalg.solve(J, -P)
    raise NewtonStagnation(f"chord refinement stalled at s={s} (residual {history[-1]:.3e})", {"s": s, "residuals": history})
