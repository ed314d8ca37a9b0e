"""Positive radial ground states of ``-Δw + λw = μ w^{p-1}``.

Solutions are computed on the whole (truncated) space or on a radial
subdomain with Dirichlet conditions.  The scheme is a normalized flow
(``u <- (A + λM)^{-1} μ M u^{p-1}`` followed by rescaling onto the Nehari
set) that monotonically lowers the Rayleigh quotient, then a Newton polish
on the discrete Euler-Lagrange equation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, InvalidArgumentError
from .radial import MIN_NODES, RadialField, RadialGrid, interpolate, make_grid

FLOW_RTOL = 1e-12
NEWTON_TOL = 1e-10
TRUNCATION_RTOL = 1e-8


@dataclass(frozen=True)
class Domain:
    """Radial domain: ``full``, ``ball`` (0, b), ``annulus`` (a, b) or ``exterior`` (a, rmax)."""

    kind: str = "full"
    a: float = 0.0
    b: float = math.inf

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def ball(cls, R):
        return cls("ball", 0.0, float(R))

    @classmethod
    def annulus(cls, a, b):
        return cls("annulus", float(a), float(b))

    @classmethod
    def exterior(cls, R):
        return cls("exterior", float(R), math.inf)

    def subgrid(self, grid: RadialGrid) -> RadialGrid:
        """Grid on the domain with spacing no coarser than ``grid``'s."""
        if self.kind == "full":
            return grid
        lo, hi = self.a, min(self.b, grid.rmax)
        if self.kind not in ("ball", "annulus", "exterior"):
            raise InvalidArgumentError(f"unknown domain kind {self.kind!r}")
        if not (0 <= lo < hi <= grid.rmax) or (self.kind != "ball" and lo <= 0):
            raise InvalidArgumentError(
                f"domain radii ({self.a}, {self.b}) must lie in (0, rmax={grid.rmax}]"
            )
        n = max(MIN_NODES, int(math.ceil((hi - lo) / grid.h - 1e-9)))
        return make_grid(hi, n, grid.d, rmin=lo)


@dataclass(frozen=True)
class ScalarProblem:
    p: float
    lam: float = 1.0
    mu: float = 1.0
    domain: Domain = field(default_factory=Domain.full)

    def check(self, d: int):
        if not self.p > 2:
            raise InvalidArgumentError(f"need p > 2, got {self.p}")
        if d >= 3 and not self.p < 2 * d / (d - 2):
            raise InvalidArgumentError(f"p={self.p} is not subcritical in dimension {d}")
        if not (self.lam > 0 and self.mu > 0):
            raise InvalidArgumentError("lambda and mu must be positive")


@dataclass(frozen=True, eq=False)
class ScalarSolution:
    profile: RadialField
    c_value: float
    energy: float
    residual: float
    native: RadialField
    problem: ScalarProblem
    iterations: int = 0
    truncated: bool = False

    @property
    def peak(self) -> float:
        return self.native.peak

    def nehari_defect(self) -> float:
        """Relative defect of ``||w||^2 = μ|w|_p^p`` on the native grid."""
        g, w, pr = self.native.grid, self.native.values, self.problem
        a = g.dirichlet_energy(w) + pr.lam * g.integrate(w * w)
        b = pr.mu * g.integrate(np.abs(w) ** pr.p)
        return float(abs(a - b) / a)


def _initial_bump(grid: RadialGrid, domain: Domain, lam: float) -> np.ndarray:
    r = grid.nodes
    width = 1.0 / math.sqrt(lam)
    if domain.kind in ("full", "ball"):
        sigma = min(width, (grid.rmax - grid.rmin) / 3.0)
        return np.exp(-0.5 * (r / sigma) ** 2)
    span = grid.rmax - grid.rmin
    center = grid.rmin + min(0.5 * span, 2.0 * width)
    sigma = min(width, span / 4.0)
    return np.exp(-0.5 * ((r - center) / sigma) ** 2)


def _quadratic(grid, lam, u):
    return grid.dirichlet_energy(u) + lam * grid.integrate(u * u)


def ground_state_on(grid: RadialGrid, p, lam, mu, u0=None, domain=Domain.full(),
                    max_flow=20000, max_newton=40):
    """Solve on ``grid`` itself (its boundary conditions define the domain).

    Returns ``(u, c, energy, residual, iterations)``.
    """
    m = grid.weights
    chol = grid.cholesky(lam)
    u = _initial_bump(grid, domain, lam) if u0 is None else np.abs(np.asarray(u0, float))

    def to_nehari(v):
        a = _quadratic(grid, lam, v)
        b = mu * grid.integrate(np.abs(v) ** p)
        t = (a / b) ** (1.0 / (p - 2))
        return v * t, a * t * t

    u, a = to_nehari(u)
    it = 0
    for it in range(1, max_flow + 1):
        v = linalg.cho_solve_banded((chol, False), mu * m * np.abs(u) ** (p - 2) * u)
        u, a_new = to_nehari(v)
        decrease = (a - a_new) / a_new
        a = a_new
        if decrease < FLOW_RTOL:
            break

    res = np.inf
    for _ in range(max_newton):
        nl = mu * np.abs(u) ** (p - 2)
        F = grid.apply_stiffness(u) + lam * m * u - m * nl * u
        res = float(np.max(np.abs(F / m)))
        if res < NEWTON_TOL * max(1.0, np.max(np.abs(u))):
            break
        du = grid.solve(lam, F, diag_extra=-(p - 1) * m * nl)
        u = u - du
    else:
        nl = mu * np.abs(u) ** (p - 2)
        F = grid.apply_stiffness(u) + lam * m * u - m * nl * u
        res = float(np.max(np.abs(F / m)))
        if not res < 1e-6 * np.max(np.abs(u)):
            raise ConvergenceError(f"Newton polish failed, residual {res:.3e}", residual=res)

    if np.max(u) <= 0:
        u = -u
    a = _quadratic(grid, lam, u)
    b = mu * grid.integrate(np.abs(u) ** p)
    c = float(a / b ** (2.0 / p))
    energy = float(0.5 * a - b / p)
    return u, c, energy, res, it


def _solve(prob: ScalarProblem, grid: RadialGrid, u0=None) -> ScalarSolution:
    prob.check(grid.d)
    sub = prob.domain.subgrid(grid)
    u, c, energy, res, it = ground_state_on(sub, prob.p, prob.lam, prob.mu, u0=u0,
                                            domain=prob.domain)
    native = RadialField(u, sub)
    profile = native if sub is grid else RadialField(interpolate(u, sub, grid), grid)
    truncated = False
    if prob.domain.kind == "full" and abs(u[-1]) > TRUNCATION_RTOL * np.max(np.abs(u)):
        truncated = True
        warnings.warn(
            f"ground state not resolved within rmax={grid.rmax}: boundary value "
            f"{abs(u[-1]) / np.max(np.abs(u)):.2e} of peak",
            RuntimeWarning,
            stacklevel=3,
        )
    return ScalarSolution(profile, c, energy, res, native, prob, it, truncated)


def solve_scalar_ground_state(prob: ScalarProblem, grid: RadialGrid) -> ScalarSolution:
    """Positive radial ground state ``w_{p,λ,μ}`` and its constant ``c_{p,λ,μ}``."""
    if prob.domain.kind != "full":
        return solve_dirichlet_ground_state(prob, grid)
    return _solve(prob, grid)


def solve_dirichlet_ground_state(prob: ScalarProblem, grid: RadialGrid) -> ScalarSolution:
    """Least-energy positive radial solution on a ball, annulus or exterior domain."""
    return _solve(prob, grid)


def compute_c(prob: ScalarProblem, grid: RadialGrid) -> float:
    """Minimal Rayleigh quotient ``c_{p,λ,μ}`` (or ``c_Ω`` on a subdomain)."""
    return _solve(prob, grid).c_value


def nehari_energy(c: float, p: float) -> float:
    """Least energy ``(1/2 - 1/p) c^{p/(p-2)}`` attached to a quotient value."""
    return (0.5 - 1.0 / p) * c ** (p / (p - 2.0))


def soliton_1d(r, p, lam=1.0, mu=1.0):
    """Closed-form ground state on the line: ``(pλ/(2μ))^{1/(p-2)} sech^{2/(p-2)}((p-2)√λ r/2)``."""
    amp = (p * lam / (2.0 * mu)) ** (1.0 / (p - 2))
    return amp / np.cosh(0.5 * (p - 2) * math.sqrt(lam) * np.asarray(r)) ** (2.0 / (p - 2))


@dataclass(frozen=True, eq=False)
class SignChangingSolution:
    """Segregated pair: ``w = positive - negative`` changes sign once at ``radius``.

    ``positive`` carries the first parameter pair, ``negative`` the second,
    both stored as non-negative profiles with disjoint supports.
    """

    positive: ScalarSolution
    negative: ScalarSolution
    radius: float
    energy: float
    first_inside: bool
    orientation_energies: tuple
    local_minima: int = 1
    boundary_optimum: bool = False

    def __iter__(self):
        return iter((self.positive, self.negative, self.radius))


class _LevelCache:
    def __init__(self, grid, p):
        self.grid, self.p = grid, p
        self._store = {}

    def solve(self, domain, lam, mu):
        key = (domain, lam, mu)
        if key not in self._store:
            self._store[key] = _solve(ScalarProblem(self.p, lam, mu, domain), self.grid)
        return self._store[key]


def _golden(f, lo, hi, tol):
    invphi = (math.sqrt(5) - 1) / 2
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def optimize_interface(level, rmax, n_scan=16, tol=1e-4):
    """Minimize ``level(R)`` over ``R`` in (0, rmax): coarse scan then golden section.

    Returns ``(R, value, n_local_minima, at_boundary)``.
    """
    Rs = rmax * np.geomspace(0.01, 0.95, n_scan)
    vals = np.array([level(R) for R in Rs])
    interior = [k for k in range(1, n_scan - 1) if vals[k] <= vals[k - 1] and vals[k] <= vals[k + 1]]
    n_min = len(interior) + int(vals[0] < vals[1]) + int(vals[-1] < vals[-2])
    k = int(np.argmin(vals))
    lo = Rs[k - 1] if k > 0 else 0.5 * Rs[0]
    hi = Rs[k + 1] if k < n_scan - 1 else 0.5 * (Rs[-1] + rmax)
    R, val = _golden(level, lo, hi, tol)
    at_boundary = k in (0, n_scan - 1)
    return R, val, max(n_min, 1), at_boundary


def solve_sign_changing(lam1, lam2, mu1, mu2, p, grid: RadialGrid, n_scan=16, tol=1e-4):
    """Least-energy sign-changing radial solution of the two-parameter scalar equation.

    The positive part lives on a ball and the negative part on its exterior,
    or the reverse; both orientations are optimized over the interface radius.
    """
    for lam, mu in ((lam1, mu1), (lam2, mu2)):
        ScalarProblem(p, lam, mu).check(grid.d)
    cache = _LevelCache(grid, p)
    pairs = ((lam1, mu1), (lam2, mu2))

    def level(R, inside, outside):
        e_in = cache.solve(Domain.ball(R), *inside).energy
        e_out = cache.solve(Domain.exterior(R), *outside).energy
        return e_in + e_out

    results = []
    for first_inside in (True, False):
        inside, outside = (pairs[0], pairs[1]) if first_inside else (pairs[1], pairs[0])
        if not first_inside and pairs[0] == pairs[1]:
            results.append(results[0][:1] + (False,) + results[0][2:])
            continue
        R, val, n_min, edge = optimize_interface(
            lambda R: level(R, inside, outside), grid.rmax, n_scan, tol
        )
        results.append((val, first_inside, R, n_min, edge))

    best = min(results, key=lambda t: t[0])
    val, first_inside, R, n_min, edge = best
    inside, outside = (pairs[0], pairs[1]) if first_inside else (pairs[1], pairs[0])
    sol_in = cache.solve(Domain.ball(R), *inside)
    sol_out = cache.solve(Domain.exterior(R), *outside)
    if n_min > 1:
        warnings.warn(f"interface level has {n_min} local minima on the scan", RuntimeWarning)
    if edge:
        warnings.warn(f"interface optimum R={R:.4g} at the edge of (0, rmax)", RuntimeWarning)
    pos, neg = (sol_in, sol_out) if first_inside else (sol_out, sol_in)
    return SignChangingSolution(
        positive=pos,
        negative=neg,
        radius=float(R),
        energy=float(sol_in.energy + sol_out.energy),
        first_inside=first_inside,
        orientation_energies=(results[0][0], results[1][0]),
        local_minima=n_min,
        boundary_optimum=edge,
    )
