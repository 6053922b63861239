"""Periodic axially symmetric profile domains and their boundary-fitted grids.

A domain is ``{(z, t) in R^n x R : |z| < phi(t)}`` with ``phi`` an even,
``2*lam``-periodic cosine series.  All PDE work happens on the symmetry cell
``0 <= r <= phi(t), 0 <= t <= lam``, discretized through the map
``(rho, t) -> (rho * phi(t), t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import NonPositiveProfile, SingularGrid, UnsupportedDimension

QUAD_PANELS = 2**12
_POSITIVITY_SAMPLES = 4096


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n (2 for n = 1)."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def unit_sphere_area(n: int) -> float:
    """Area of the unit sphere S^{n-1} bounding the unit n-ball (2 for n = 1)."""
    return n * unit_ball_volume(n)


class Profile(Protocol):
    """Anything that can carry a mapped grid: a dimension, a half-period and phi."""

    n: int
    half_period: float

    def phi(self, t) -> np.ndarray: ...

    def dphi(self, t) -> np.ndarray: ...


@dataclass(frozen=True)
class ProfileDomain:
    n: int
    half_period: float
    cosine_coeffs: tuple[float, ...]
    m: int = 1

    @property
    def lam(self) -> float:
        return self.half_period

    @property
    def a0(self) -> float:
        return self.cosine_coeffs[0]

    def _modes(self):
        k = np.arange(1, len(self.cosine_coeffs))
        return k, np.asarray(self.cosine_coeffs[1:], dtype=float), np.pi * k / self.half_period

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        k, a, w = self._modes()
        if len(k) == 0:
            return np.full(t.shape, float(self.cosine_coeffs[0]))
        return self.cosine_coeffs[0] + np.cos(np.multiply.outer(t, w)) @ a

    def dphi(self, t):
        t = np.asarray(t, dtype=float)
        k, a, w = self._modes()
        if len(k) == 0:
            return np.zeros(t.shape)
        return -np.sin(np.multiply.outer(t, w)) @ (a * w)

    def d2phi(self, t):
        t = np.asarray(t, dtype=float)
        k, a, w = self._modes()
        if len(k) == 0:
            return np.zeros(t.shape)
        return -np.cos(np.multiply.outer(t, w)) @ (a * w * w)

    def scaled(self, c: float) -> "ProfileDomain":
        """Dilate the domain by ``c`` in every variable."""
        return ProfileDomain(self.n, self.half_period * c, tuple(c * a for a in self.cosine_coeffs), self.m)

    def to_dict(self) -> dict:
        return {"n": self.n, "lambda": self.half_period, "coeffs": list(self.cosine_coeffs)}

    @classmethod
    def from_dict(cls, data: dict) -> "ProfileDomain":
        return build_profile(int(data["n"]), float(data["lambda"]), data["coeffs"], int(data.get("m", 1)))


def build_profile(n: int, lam: float, coeffs: Sequence[float], m: int = 1) -> ProfileDomain:
    """Validate and construct a :class:`ProfileDomain`.

    Positivity is accepted outright when ``a_0 > sum |a_k|``; otherwise
    ``phi`` is sampled densely on ``[0, lam]``.
    """
    if m != 1:
        raise UnsupportedDimension(f"only one periodic variable is supported, got m={m}")
    if int(n) != n or n < 1:
        raise UnsupportedDimension(f"radial dimension must be a positive integer, got n={n}")
    if not lam > 0:
        raise ValueError(f"half-period must be positive, got {lam}")
    coeffs = tuple(float(a) for a in coeffs)
    if len(coeffs) == 0:
        raise ValueError("at least the constant coefficient a_0 is required")
    d = ProfileDomain(int(n), float(lam), coeffs, 1)
    if coeffs[0] > sum(abs(a) for a in coeffs[1:]):
        return d
    t = np.linspace(0.0, lam, _POSITIVITY_SAMPLES + 1)
    vals = d.phi(t)
    if np.min(vals) <= 0.0:
        j = int(np.argmin(vals))
        raise NonPositiveProfile(f"phi({t[j]:.6g}) = {vals[j]:.6g} <= 0")
    return d


def _reduce(d: ProfileDomain, t):
    # fold t into [0, lam] using evenness and 2*lam periodicity
    t = np.mod(np.asarray(t, dtype=float), 2.0 * d.half_period)
    return np.where(t > d.half_period, 2.0 * d.half_period - t, t)


def phi_eval(d: ProfileDomain, t):
    out = d.phi(_reduce(d, t))
    return float(out) if np.ndim(out) == 0 else out


def phi_derivative(d: ProfileDomain, t):
    t = np.asarray(t, dtype=float)
    tm = np.mod(t, 2.0 * d.half_period)
    sign = np.where(tm > d.half_period, -1.0, 1.0)
    out = sign * d.dphi(_reduce(d, t))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ParallelProfile:
    """Inner parallel surface of a profile at normal distance ``eps``.

    Boundary point ``(phi(s), s)`` moves to ``(phi(s) - eps*c, s + eps*phi'(s)*c)``
    with ``c = 1/sqrt(1+phi'^2)``; the slope of the parallel curve at the image
    point equals ``phi'(s)``.
    """

    base: ProfileDomain
    eps: float

    def __post_init__(self):
        s = np.linspace(0.0, self.base.half_period, 2049)
        p1 = self.base.dphi(s)
        kappa = np.abs(self.base.d2phi(s)) / (1.0 + p1**2) ** 1.5
        if self.eps >= np.min(self.base.phi(s)):
            raise SingularGrid(f"eps={self.eps} swallows the whole cross-section")
        if np.max(kappa) * self.eps >= 0.5:
            raise SingularGrid(f"eps={self.eps} too large for boundary curvature {np.max(kappa):.3g}")

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def half_period(self) -> float:
        return self.base.half_period

    def _foot(self, t):
        t = np.asarray(t, dtype=float)
        s = t.copy()
        b, e = self.base, self.eps
        for _ in range(50):
            p1 = b.dphi(s)
            c = 1.0 / np.sqrt(1.0 + p1 * p1)
            f = s + e * p1 * c - t
            df = 1.0 + e * b.d2phi(s) * c**3
            ds = f / df
            s = s - ds
            if np.max(np.abs(ds), initial=0.0) < 1e-15 * (1.0 + self.half_period):
                break
        return s

    def phi(self, t):
        s = self._foot(t)
        p1 = self.base.dphi(s)
        return self.base.phi(s) - self.eps / np.sqrt(1.0 + p1 * p1)

    def dphi(self, t):
        return self.base.dphi(self._foot(t))


@dataclass(frozen=True, eq=False)
class MappedGrid:
    """Tensor grid on ``{0 <= rho <= rho_max, t_lo <= t <= t_hi}``.

    Node ``[i, j]`` sits at ``rho[i]``, ``t[j]`` with physical radius
    ``r = rho * phi(t)``.  The map ``(rho, t) -> (r, t)`` has Jacobian
    determinant ``phi(t)``; ``weight`` additionally carries ``r^(n-1)``.
    """

    profile: Profile
    n_rho: int
    n_t: int
    rho_max: float = 1.0
    t_lo: float = 0.0
    t_hi: float | None = None
    rho: np.ndarray = field(init=False, repr=False)
    t: np.ndarray = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)
    dphi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t_hi = self.profile.half_period if self.t_hi is None else self.t_hi
        object.__setattr__(self, "t_hi", float(t_hi))
        if self.t_hi <= self.t_lo:
            raise SingularGrid("empty t-range")
        rho = np.linspace(0.0, self.rho_max, self.n_rho + 1)
        t = np.linspace(self.t_lo, self.t_hi, self.n_t + 1)
        phi = np.asarray(self.profile.phi(t), dtype=float)
        if np.min(phi) <= 0.0 or not np.all(np.isfinite(phi)):
            raise SingularGrid("profile is not positive on the grid")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "dphi", np.asarray(self.profile.dphi(t), dtype=float))

    @property
    def n(self) -> int:
        return self.profile.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rho + 1, self.n_t + 1)

    @property
    def h_rho(self) -> float:
        return self.rho_max / self.n_rho

    @property
    def h_t(self) -> float:
        return (self.t_hi - self.t_lo) / self.n_t

    @property
    def r(self) -> np.ndarray:
        return self.rho[:, None] * self.phi[None, :]

    @property
    def jacobian(self) -> np.ndarray:
        """Determinant of d(r, t)/d(rho, t) at every node."""
        return np.broadcast_to(self.phi[None, :], self.shape)

    @property
    def weight(self) -> np.ndarray:
        return self.r ** (self.n - 1) * self.jacobian

    def boundary_measure(self) -> np.ndarray:
        """Trapezoid weights of the lateral boundary area at the nodes of ``rho = rho_max``."""
        w = np.full(self.n_t + 1, self.h_t)
        w[0] *= 0.5
        w[-1] *= 0.5
        rb = self.rho_max * self.phi
        slope = self.rho_max * self.dphi
        return unit_sphere_area(self.n) * w * rb ** (self.n - 1) * np.sqrt(1.0 + slope**2)

    def boundary_normal(self) -> tuple[np.ndarray, np.ndarray]:
        """Outer unit normal ``(nu_r, nu_t)`` along ``rho = rho_max``."""
        slope = self.rho_max * self.dphi
        s = np.sqrt(1.0 + slope**2)
        return 1.0 / s, -slope / s


def generate_grid(d: Profile, n_rho: int, n_t: int, **kw) -> MappedGrid:
    if n_rho < 8 or n_t < 8:
        raise ValueError(f"grid needs at least 8 intervals per direction, got {n_rho}x{n_t}")
    return MappedGrid(d, int(n_rho), int(n_t), **kw)


def _simpson(f, a: float, b: float, panels: int = QUAD_PANELS) -> float:
    x = np.linspace(a, b, 2 * panels + 1)
    y = f(x)
    h = (b - a) / (2 * panels)
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * np.sum(y[1:-1:2]) + 2.0 * np.sum(y[2:-1:2])))


def volume_in_slab(d: ProfileDomain, periods: int = 1, panels: int = QUAD_PANELS) -> float:
    """``|Omega ∩ S|`` for a slab made of ``periods`` half-periods."""
    if periods < 1:
        raise ValueError("periods must be >= 1")
    one = _simpson(lambda t: d.phi(t) ** d.n, 0.0, d.half_period, panels)
    return periods * unit_ball_volume(d.n) * one


def lateral_perimeter_in_slab(d: ProfileDomain, periods: int = 1, panels: int = QUAD_PANELS) -> float:
    """Relative perimeter ``P(Omega, S)``: lateral boundary only, slab walls excluded."""
    if periods < 1:
        raise ValueError("periods must be >= 1")
    one = _simpson(lambda t: d.phi(t) ** (d.n - 1) * np.sqrt(1.0 + d.dphi(t) ** 2), 0.0, d.half_period, panels)
    return periods * unit_sphere_area(d.n) * one
