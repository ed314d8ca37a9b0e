"""Radial discretization of R^d.

A :class:`RadialGrid` is a cell-centred uniform grid on ``(rmin, rmax)``.
Integrals over the shell ``rmin < |x| < rmax`` use the midpoint rule with
weight ``sigma_{d-1} r^{d-1} h``.  The Dirichlet energy is assembled as a sum
over cell faces, so it is exactly the quadratic form of the tridiagonal
stiffness matrix.  Boundary conditions:

* ``r = rmin = 0``: symmetry (zero flux through the origin),
* ``r = rmin > 0`` and ``r = rmax``: homogeneous Dirichlet, imposed through a
  ghost value half a cell outside.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import InvalidArgumentError, InvalidStateError

MIN_NODES = 16


def sphere_measure(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass(frozen=True)
class Params:
    """Data of the K-component system: dimension, exponents and coefficients."""

    d: int
    K: int
    q: float
    lam: tuple
    mu: tuple
    beta: float = 0.0

    def __post_init__(self):
        lam = tuple(float(x) for x in np.atleast_1d(self.lam))
        mu = tuple(float(x) for x in np.atleast_1d(self.mu))
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "beta", float(self.beta))
        if int(self.d) != self.d or self.d < 1:
            raise InvalidArgumentError(f"dimension must be a positive integer, got {self.d}")
        if int(self.K) != self.K or self.K < 3:
            raise InvalidArgumentError(f"K must be an integer >= 3, got {self.K}")
        if len(lam) != self.K or len(mu) != self.K:
            raise InvalidArgumentError("lambda and mu must have exactly K entries")
        if min(lam) <= 0 or min(mu) <= 0:
            raise InvalidArgumentError("lambda_i and mu_i must be positive")
        if not self.q >= 1:
            raise InvalidArgumentError(f"q must be >= 1, got {self.q}")
        if self.d >= 3 and not self.q < 2 * self.d / (self.K * (self.d - 2)):
            raise InvalidArgumentError(
                f"q={self.q} is not subcritical: need q < 2d/(K(d-2)) = "
                f"{2 * self.d / (self.K * (self.d - 2)):.6g}"
            )

    @classmethod
    def uniform(cls, d=2, K=3, q=2.0, beta=0.0, lam=1.0, mu=1.0):
        return cls(d=d, K=K, q=q, lam=(lam,) * K, mu=(mu,) * K, beta=beta)

    @property
    def p(self) -> float:
        """Exponent Kq of the self-interaction."""
        return self.K * self.q

    @property
    def lam_arr(self) -> np.ndarray:
        return np.asarray(self.lam)

    @property
    def mu_arr(self) -> np.ndarray:
        return np.asarray(self.mu)

    def with_beta(self, beta: float) -> "Params":
        return Params(self.d, self.K, self.q, self.lam, self.mu, beta)

    def default_rmax(self) -> float:
        return 30.0 / math.sqrt(min(self.lam))


@dataclass(frozen=True, eq=False)
class RadialGrid:
    rmax: float
    n: int
    d: int
    rmin: float = 0.0
    h: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = (self.rmax - self.rmin) / self.n
        nodes = self.rmin + (np.arange(self.n) + 0.5) * h
        weights = sphere_measure(self.d) * nodes ** (self.d - 1) * h
        nodes.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @cached_property
    def face_coefficients(self):
        """Per-face stiffness coefficients ``(inner, interior, outer)``.

        ``interior[j]`` couples nodes j and j+1; ``inner``/``outer`` multiply
        the squared value of the first/last node (Dirichlet ghost faces).
        """
        sigma = sphere_measure(self.d)
        faces = self.rmin + np.arange(1, self.n) * self.h
        interior = sigma * faces ** (self.d - 1) / self.h
        outer = sigma * self.rmax ** (self.d - 1) / (0.5 * self.h)
        if self.rmin > 0:
            inner = sigma * self.rmin ** (self.d - 1) / (0.5 * self.h)
        else:
            inner = 0.0
        return inner, interior, outer

    @cached_property
    def stiffness_bands(self):
        """Main diagonal and first off-diagonal of the stiffness matrix."""
        inner, interior, outer = self.face_coefficients
        diag = np.zeros(self.n)
        diag[:-1] += interior
        diag[1:] += interior
        diag[0] += inner
        diag[-1] += outer
        return diag, -interior

    def apply_stiffness(self, u: np.ndarray) -> np.ndarray:
        """Stiffness matrix times ``u`` along the last axis."""
        diag, off = self.stiffness_bands
        out = diag * u
        out[..., :-1] += off * u[..., 1:]
        out[..., 1:] += off * u[..., :-1]
        return out

    def dirichlet_energy(self, u: np.ndarray) -> np.ndarray:
        """Face-sum form of ``int |grad u|^2`` along the last axis."""
        inner, interior, outer = self.face_coefficients
        du = np.diff(u, axis=-1)
        val = np.sum(interior * du * du, axis=-1)
        val = val + outer * u[..., -1] ** 2 + inner * u[..., 0] ** 2
        return val

    def integrate(self, f: np.ndarray) -> np.ndarray:
        return np.sum(self.weights * f, axis=-1)

    def volume(self) -> float:
        return sphere_measure(self.d) * (self.rmax**self.d - self.rmin**self.d) / self.d

    def laplacian_matrix(self):
        """Sparse discrete radial Laplacian ``-M^{-1} A``."""
        from scipy import sparse

        diag, off = self.stiffness_bands
        A = sparse.diags([off, diag, off], [-1, 0, 1], format="csr")
        return -sparse.diags(1.0 / self.weights) @ A

    def operator_bands(self, lam: float, diag_extra: np.ndarray | None = None) -> np.ndarray:
        """Banded storage (1, 1) of ``A + lam*M + diag(diag_extra)``."""
        diag, off = self.stiffness_bands
        ab = np.zeros((3, self.n))
        ab[0, 1:] = off
        ab[1] = diag + lam * self.weights
        if diag_extra is not None:
            ab[1] += diag_extra
        ab[2, :-1] = off
        return ab

    def solve(self, lam: float, rhs: np.ndarray, diag_extra: np.ndarray | None = None) -> np.ndarray:
        """Solve ``(A + lam*M + diag(diag_extra)) x = rhs``."""
        return linalg.solve_banded((1, 1), self.operator_bands(lam, diag_extra), rhs)

    def cholesky(self, lam: float) -> np.ndarray:
        ab = self.operator_bands(lam)
        upper = np.vstack([ab[0], ab[1]])
        return linalg.cholesky_banded(upper)

    def same_as(self, other: "RadialGrid") -> bool:
        return (
            self is other
            or (
                self.n == other.n
                and self.d == other.d
                and self.rmax == other.rmax
                and self.rmin == other.rmin
            )
        )


def make_grid(rmax: float, n: int, d: int, rmin: float = 0.0) -> RadialGrid:
    """Uniform cell-centred grid on ``(rmin, rmax)`` in dimension ``d``."""
    if not (np.isfinite(rmax) and rmax > 0):
        raise InvalidArgumentError(f"rmax must be positive, got {rmax}")
    if int(n) != n or n < MIN_NODES:
        raise InvalidArgumentError(f"need at least {MIN_NODES} nodes, got {n}")
    if int(d) != d or d < 1:
        raise InvalidArgumentError(f"dimension must be a positive integer, got {d}")
    if not (0 <= rmin < rmax):
        raise InvalidArgumentError(f"need 0 <= rmin < rmax, got rmin={rmin}")
    return RadialGrid(rmax=float(rmax), n=int(n), d=int(d), rmin=float(rmin))


def default_grid(params: Params, n: int = 4000) -> RadialGrid:
    return make_grid(params.default_rmax(), n, params.d)


@dataclass(frozen=True, eq=False)
class RadialField:
    values: np.ndarray
    grid: RadialGrid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n,):
            raise InvalidStateError(
                f"field has shape {values.shape}, grid expects ({self.grid.n},)"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, f, grid: RadialGrid) -> "RadialField":
        return cls(f(grid.nodes), grid)

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __mul__(self, c):
        return RadialField(self.values * c, self.grid)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SystemState:
    """K radial components on a shared grid, stored as a (K, n) array."""

    values: np.ndarray
    grid: RadialGrid

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.grid.n:
            raise InvalidStateError(
                f"state has shape {values.shape}, grid expects (K, {self.grid.n})"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def from_fields(cls, fields: Sequence[RadialField]) -> "SystemState":
        grid = fields[0].grid
        for f in fields[1:]:
            if not f.grid.same_as(grid):
                raise InvalidStateError("all components must share the same grid")
        return cls(np.vstack([f.values for f in fields]), grid)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def components(self) -> list:
        return [RadialField(v, self.grid) for v in self.values]

    def scaled(self, t) -> "SystemState":
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return SystemState(self.values * t, self.grid)
        return SystemState(self.values * t[:, None], self.grid)


def weighted_norm_sq(f: RadialField, lam: float) -> float:
    """``||f||_lam^2 = int |grad f|^2 + lam f^2``."""
    g = f.grid
    return float(g.dirichlet_energy(f.values) + lam * g.integrate(f.values**2))


def lp_norm(f: RadialField, p: float, mu: float = 1.0) -> float:
    """``(int mu |f|^p)^{1/p}``."""
    if not p >= 1:
        raise InvalidArgumentError(f"p must be >= 1, got {p}")
    if not mu > 0:
        raise InvalidArgumentError(f"mu must be positive, got {mu}")
    return float((mu * f.grid.integrate(np.abs(f.values) ** p)) ** (1.0 / p))


def product_integral(u: SystemState, q: float) -> float:
    """``int prod_i |u_i|^q``."""
    prod = np.prod(np.abs(u.values) ** q, axis=0)
    return float(u.grid.integrate(prod))


def interpolate(field_values: np.ndarray, source: RadialGrid, target: RadialGrid) -> np.ndarray:
    """Linear interpolation of a profile from ``source`` onto ``target``.

    Values are zero outside the source shell; the Dirichlet ends are pinned
    to zero and the symmetric end at the origin is extended flat.
    """
    r = [source.nodes]
    v = [field_values]
    if source.rmin > 0:
        r.insert(0, np.array([source.rmin]))
        v.insert(0, np.array([0.0]))
    else:
        r.insert(0, np.array([0.0]))
        v.insert(0, field_values[:1])
    r.append(np.array([source.rmax]))
    v.append(np.array([0.0]))
    rr = np.concatenate(r)
    vv = np.concatenate(v)
    out = np.interp(target.nodes, rr, vv, left=0.0, right=0.0)
    out[(target.nodes < source.rmin) | (target.nodes > source.rmax)] = 0.0
    return out
