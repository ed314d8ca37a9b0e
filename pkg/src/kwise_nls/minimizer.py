"""Constrained minimization of I_β on the Nehari set and on M_β^r.

Iterates always live on the constraint set.  Each step moves along a
Sobolev-preconditioned L-BFGS direction and projects back (single scaling
for the Nehari set, componentwise scalings for M_β^r).  The step is accepted
by an Armijo test on the projected energy.  Because the projection is a
critical point of the fibering map, the gradient of the projected energy at
a feasible point is just ``I_β'(u)``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from .errors import (ConvergenceError, InfeasibleStartError, InvalidArgumentError,
                     InvalidStateError, NotProjectableError)
from .radial import Params, RadialField, RadialGrid, SystemState
from .scalar import ScalarProblem, solve_scalar_ground_state, solve_sign_changing
from .system import (constraint_gradients, constraints_G, energy, grad_energy,
                     gradient_scale, integrals, m_project, nehari_project, newton_polish)

log = logging.getLogger(__name__)

DEFAULT_SEED = 20240611
CONSTRAINT_TOL = 1e-8


@dataclass(frozen=True)
class Classification:
    kind: str
    zero_set: tuple = ()

    @property
    def fully_nontrivial(self) -> bool:
        return self.kind == "fully-non-trivial"

    def __str__(self):
        if self.kind == "semi-trivial":
            return "semi-trivial{" + ",".join(str(i) for i in self.zero_set) + "}"
        return self.kind


@dataclass(frozen=True, eq=False)
class Solution:
    state: SystemState
    level: float
    classification: Classification
    multiplier_residual: float
    converged: bool
    iterations: int
    constraint: str = "M"
    label: str = ""
    multipliers: np.ndarray | None = None
    gradient_residual: float = float("nan")
    runs: tuple = ()


@dataclass(frozen=True, eq=False)
class LimitStructure:
    pair: tuple
    interface_radius: float
    level: float
    segregated_parts: tuple
    free_components: tuple
    free_indices: tuple
    state: SystemState
    pair_energy: float


@dataclass(frozen=True)
class MinimizeOptions:
    maxiter: int = 4000
    memory: int = 12
    armijo: float = 1e-4
    ftol: float = 1e-12
    stall_steps: int = 5
    gtol: float = 1e-10
    polish: bool = True
    seed: int = DEFAULT_SEED
    n_random: int = 4
    delta: float | None = None
    ubar_beta: float | None = None


# ---------------------------------------------------------------- helpers

_GROUND_CACHE: dict = {}


def ground_states(params: Params, grid: RadialGrid) -> list:
    """Full-space scalar ground states ``w_{Kq,λ_i,μ_i}``, one per component."""
    out = []
    for lam, mu in zip(params.lam, params.mu):
        key = (params.p, lam, mu, grid.rmax, grid.n, grid.d, grid.rmin)
        if key not in _GROUND_CACHE:
            _GROUND_CACHE[key] = solve_scalar_ground_state(ScalarProblem(params.p, lam, mu), grid)
        out.append(_GROUND_CACHE[key])
    return out


def semi_trivial_ceiling(params: Params, grid: RadialGrid) -> float:
    """``(1/2 - 1/(Kq)) S̄^{Kq/(Kq-2)}``: the least semi-trivial energy."""
    return min(w.energy for w in ground_states(params, grid))


def default_delta(params: Params, grid: RadialGrid) -> float:
    s_bar = min(w.c_value for w in ground_states(params, grid))
    return max(1e-4, 0.1 * s_bar ** (1.0 / (params.p - 2)))


def component_lp(u: SystemState, params: Params) -> np.ndarray:
    """``|u_i|_{Kq,i}`` for each component."""
    _, b, _ = integrals(u, params)
    return b ** (1.0 / params.p)


def classify_state(u: SystemState, params: Params, delta: float) -> Classification:
    norms = component_lp(u, params)
    if not np.any(norms >= delta):
        return Classification("degenerate", tuple(range(params.K)))
    zero = tuple(int(i) for i in np.flatnonzero(norms < delta))
    if zero:
        return Classification("semi-trivial", zero)
    return Classification("fully-non-trivial")


def classify(sol: Solution, delta: float, params: Params) -> Classification:
    """Fully non-trivial versus semi-trivial(S), S the components below ``delta``."""
    if not delta > 0:
        raise InvalidArgumentError("delta must be positive")
    return classify_state(sol.state, params, delta)


def multiplier_residual(u: SystemState, params: Params, constraint: str):
    """Least-squares multipliers for ``I' = Σγ_i G_i'`` and the max-norm of the remainder.

    The remainder is measured in strong form relative to :func:`gradient_scale`.
    """
    m = u.grid.weights
    g = grad_energy(u, params) / m
    CG = constraint_gradients(u, params) / m
    if constraint == "N":
        CG = CG.sum(axis=0, keepdims=True)
    A = (CG * np.sqrt(m)).reshape(CG.shape[0], -1).T
    rhs = (g * np.sqrt(m)).ravel()
    gamma, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    rem = g - np.tensordot(gamma, CG, axes=1)
    return gamma, float(np.max(np.abs(rem)) / gradient_scale(u, params))


# ---------------------------------------------------------------- descent

def _projector(params: Params, constraint: str):
    if constraint == "N":
        return lambda u: nehari_project(u, params)[1]
    return lambda u: m_project(u, params)[1]


def _precondition(grid: RadialGrid, params: Params, g: np.ndarray) -> np.ndarray:
    return np.vstack([grid.solve(lam, gi) for lam, gi in zip(params.lam, g)])


def descend(params: Params, init: SystemState, constraint: str = "M",
            opts: MinimizeOptions = MinimizeOptions(), callback=None):
    """Projected L-BFGS from ``init``. Returns ``(state, level, iterations, converged)``.

    ``callback(state, level)`` is called on the projected start and on every
    accepted iterate.
    """
    grid = init.grid
    project = _projector(params, constraint)
    x = project(init)
    E = energy(x, params).total
    g = grad_energy(x, params)
    scale = gradient_scale(x, params)
    if callback:
        callback(x, E)
    S, Y = [], []
    stall = 0
    converged = False
    it = 0
    for it in range(1, opts.maxiter + 1):
        q = g.copy()
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            a = np.sum(s * q) / np.sum(y * s)
            alphas.append(a)
            q -= a * y
        r = _precondition(grid, params, q)
        if S:
            s, y = S[-1], Y[-1]
            r *= np.sum(s * y) / np.sum(y * _precondition(grid, params, y))
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            b = np.sum(y * r) / np.sum(y * s)
            r += (a - b) * s
        d = -r
        gd = float(np.sum(g * d))
        if not gd < 0:
            S, Y = [], []
            d = -_precondition(grid, params, g)
            gd = float(np.sum(g * d))
        step = 1.0
        accepted = False
        while step > 1e-14:
            try:
                y_state = project(SystemState(x.values + step * d, grid))
                Ey = energy(y_state, params).total
                if Ey <= E + opts.armijo * step * gd:
                    accepted = True
                    break
            except NotProjectableError:
                pass
            step *= 0.5
        if not accepted:
            if S:
                S, Y = [], []
                continue
            break
        gy = grad_energy(y_state, params)
        s = y_state.values - x.values
        yv = gy - g
        if np.sum(s * yv) > 1e-14 * math.sqrt(np.sum(s * s) * np.sum(yv * yv)):
            S.append(s)
            Y.append(yv)
            if len(S) > opts.memory:
                S.pop(0)
                Y.pop(0)
        dE = E - Ey
        x, E, g = y_state, Ey, gy
        if callback:
            callback(x, E)
        res = float(np.max(np.abs(g / grid.weights))) / scale
        if res < opts.gtol:
            converged = True
            break
        stall = stall + 1 if dE <= opts.ftol * max(1.0, abs(E)) else 0
        if stall >= opts.stall_steps:
            converged = True
            break
    return x, float(E), it, converged


def _polish(params, x, E, constraint):
    if params.q < 2:
        return x, E
    try:
        y, res, ok = newton_polish(x, params)
    except (ValueError, RuntimeError, ArithmeticError):
        return x, E
    if not ok:
        return x, E
    try:
        y = _projector(params, constraint)(y)
    except NotProjectableError:
        return x, E
    Ey = energy(y, params).total
    if abs(Ey - E) <= 1e-6 * max(1.0, abs(E)) and np.all(np.isfinite(y.values)):
        return y, Ey
    return x, E


def _single_run(params, init, constraint, opts, label, delta):
    try:
        x, E, it, conv = descend(params, init, constraint, opts)
    except NotProjectableError as exc:
        return None, f"{label}: {exc}"
    if opts.polish:
        x, E = _polish(params, x, E, constraint)
    G = constraints_G(x, params)
    a, _, _ = integrals(x, params)
    if constraint == "N":
        feasible = abs(G.sum()) <= CONSTRAINT_TOL * a.sum()
    else:
        feasible = bool(np.all(np.abs(G) <= CONSTRAINT_TOL * a))
    gamma, mres = multiplier_residual(x, params, constraint)
    gres = float(np.max(np.abs(grad_energy(x, params) / x.grid.weights))) / gradient_scale(x, params)
    sol = Solution(
        state=x,
        level=E,
        classification=classify_state(x, params, delta),
        multiplier_residual=mres,
        converged=bool(conv and feasible),
        iterations=it,
        constraint=constraint,
        label=label,
        multipliers=gamma,
        gradient_residual=gres,
    )
    return sol, None


def _run_task(args):
    return _single_run(*args)


# ---------------------------------------------------------------- seeds

def _bump(r, center, width):
    return np.exp(-0.5 * ((r - center) / width) ** 2)


def default_seeds(params: Params, grid: RadialGrid, constraint: str = "M",
                  seed: int = DEFAULT_SEED, n_random: int = 4, limit=None) -> list:
    """The deterministic multistart battery as ``(label, state)`` pairs."""
    r = grid.nodes
    K = params.K
    width = 1.0 / math.sqrt(min(params.lam))
    ws = ground_states(params, grid)
    seeds = []
    seeds.append(("symmetric", SystemState(np.vstack([w.profile.values for w in ws]), grid)))
    stag = np.vstack([_bump(r, 1.5 * i * width, width) for i in range(K)])
    seeds.append(("staggered", SystemState(stag, grid)))
    i0 = int(np.argmin([w.energy for w in ws]))
    semi = 0.05 * np.vstack([_bump(r, 0.0, 2 * width)] * K)
    semi[i0] = ws[i0].profile.values
    seeds.append(("semi-trivial", SystemState(semi, grid)))
    if constraint == "M":
        if limit is None:
            limit = minimize_limit_problem(params, grid)
        warm = limit.state.values + 1e-3 * np.vstack([_bump(r, 0.0, width)] * K)
        seeds.append(("limit", SystemState(warm, grid)))
    else:
        mixed = np.vstack([w.profile.values for w in ws])
        mixed *= np.linspace(1.0, 0.3, K)[:, None]
        seeds.append(("graded", SystemState(mixed, grid)))
    rng = np.random.default_rng(seed)
    for k in range(n_random):
        vals = np.zeros((K, grid.n))
        for i in range(K):
            for _ in range(2):
                c = rng.uniform(0.0, 4.0 * width)
                s = rng.uniform(0.5, 1.5) * width
                vals[i] += rng.uniform(0.3, 1.5) * _bump(r, c, s)
        seeds.append((f"random-{seed}-{k}", SystemState(vals, grid)))
    return seeds


def _as_seed_list(init):
    if init is None:
        return None
    if isinstance(init, SystemState):
        return [("init", init)]
    return [(lbl, s) if isinstance(s, SystemState) else s for lbl, s in init] \
        if isinstance(init[0], tuple) else [(f"init-{k}", s) for k, s in enumerate(init)]


def _multistart(params, seeds, constraint, opts, jobs):
    grid = seeds[0][1].grid
    delta = opts.delta if opts.delta is not None else default_delta(params, grid)
    tasks = [(params, s, constraint, opts, lbl, delta) for lbl, s in seeds]
    if jobs and jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    sols = [s for s, _ in results if s is not None]
    for _, err in results:
        if err:
            log.info("seed rejected: %s", err)
    if not sols:
        raise InfeasibleStartError(
            "no initial state could be projected onto the constraint set",
            residuals=[err for _, err in results],
        )
    ok = [s for s in sols if s.converged] or sols
    best = min(ok, key=lambda s: (s.level, s.label))
    if not best.converged:
        raise ConvergenceError(
            f"no run converged (best level {best.level:.6g})", residual=best.gradient_residual
        )
    runs = tuple((s.label, s.level, s.converged, str(s.classification)) for s in sols)
    return replace(best, runs=runs)


def minimize_on_nehari(params: Params, init=None, grid: RadialGrid | None = None,
                       opts: MinimizeOptions = MinimizeOptions(), jobs: int = 1) -> Solution:
    """Best-found upper bound for ``ℓ_β = inf_{N_β} I_β`` (β >= 0).

    ``init`` is a state, a list of states or ``None`` for the default battery
    (which needs ``grid``).  The best converged run is returned; all runs are
    summarized in ``Solution.runs``.
    """
    if params.beta < 0:
        raise InvalidArgumentError("the Nehari problem is set up for beta >= 0")
    seeds = _as_seed_list(init)
    if seeds is None:
        if grid is None:
            raise InvalidArgumentError("need init or grid")
        seeds = default_seeds(params, grid, "N", opts.seed, opts.n_random)
    return _multistart(params, seeds, "N", opts, jobs)


def minimize_on_Mr(params: Params, init=None, grid: RadialGrid | None = None,
                   opts: MinimizeOptions = MinimizeOptions(), jobs: int = 1,
                   limit: LimitStructure | None = None) -> Solution:
    """Best-found upper bound for ``k_β^r = inf_{M_β^r} I_β``."""
    if opts.ubar_beta is not None and params.beta >= opts.ubar_beta:
        raise InvalidArgumentError(
            f"beta={params.beta} is not below the existence threshold {opts.ubar_beta:.6g}"
        )
    seeds = _as_seed_list(init)
    if seeds is None:
        if grid is None:
            raise InvalidArgumentError("need init or grid")
        seeds = default_seeds(params, grid, "M", opts.seed, opts.n_random, limit)
    for lbl, s in seeds:
        if np.any(component_lp(s, params) == 0):
            raise InvalidStateError(f"seed {lbl} has a zero component")
    return _multistart(params, seeds, "M", opts, jobs)


# ---------------------------------------------------------------- constructions

def cutoff(s):
    """Smooth cut-off: 1 on [0, 1/2], 0 on [1, ∞)."""
    s = np.asarray(s, dtype=float)

    def psi(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    a = psi(1.0 - s)
    b = psi(s - 0.5)
    return a / (a + b)


@dataclass(frozen=True, eq=False)
class DisjointTestState:
    """Cut-off ground states with the first one translated by ``2R e_1``.

    ``profiles`` are the radial profiles about each centre; ``centres`` holds
    the first coordinate of each centre.  The product of all components
    vanishes because the supports ``B_R(2R e_1)`` and ``B_R(0)`` meet in at
    most one point.
    """

    profiles: SystemState
    centres: np.ndarray
    R: float
    scalings: np.ndarray
    component_energies: np.ndarray
    energy: float
    constraint_residuals: np.ndarray
    product_integral: float = 0.0

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Component values at Cartesian ``points`` of shape (m, d)."""
        g = self.profiles.grid
        out = []
        for v, c in zip(self.profiles.values, self.centres):
            shift = np.array(points, dtype=float)
            shift[:, 0] -= c
            rad = np.linalg.norm(shift, axis=1)
            vals = np.interp(rad, g.nodes, v, left=v[0], right=0.0)
            vals[rad >= self.R] = 0.0
            out.append(vals)
        return np.vstack(out)


def build_disjoint_test_state(params: Params, R: float, grid: RadialGrid,
                              realization: str = "translated"):
    """Feasible family whose energy tends to ``Σ_i I(w_i)`` as ``R`` grows.

    ``realization="translated"`` (default) returns a :class:`DisjointTestState`;
    its energy is exact because each component is evaluated about its own
    centre.  ``realization="annular"`` returns a radial ``SystemState`` with
    the first component carried by an annulus ``(2R, 3R)``; this variant is
    feasible but its energy grows with ``R`` in dimension >= 2.
    """
    if not R > 0:
        raise InvalidArgumentError("R must be positive")
    ws = ground_states(params, grid)
    r = grid.nodes
    if realization == "translated":
        if R > grid.rmax:
            raise InvalidArgumentError(f"R={R} exceeds the grid radius {grid.rmax}")
        prof = np.vstack([cutoff(r / R) * w.profile.values for w in ws])
        centres = np.zeros(params.K)
        centres[0] = 2.0 * R
    elif realization == "annular":
        if 3 * R > grid.rmax:
            raise InvalidArgumentError(f"3R={3 * R} exceeds the grid radius {grid.rmax}")
        prof = np.vstack([cutoff(r / R) * w.profile.values for w in ws])
        mid = 2.5 * R
        prof[0] = cutoff(np.abs(r - mid) / (0.5 * R)) * np.interp(
            np.abs(r - mid), r, ws[0].profile.values)
        centres = None
    else:
        raise InvalidArgumentError(f"unknown realization {realization!r}")
    u = SystemState(prof, grid)
    a, b, _ = integrals(u, params)
    t = (a / b) ** (1.0 / (params.p - 2))
    u = u.scaled(t)
    a, b, P = integrals(u, params)
    comp = 0.5 * a - b / params.p
    if realization == "annular":
        return u
    G = a - b
    return DisjointTestState(u, centres, float(R), t, comp, float(comp.sum()), G)


def _pair_problem(params, i1, i2, grid):
    return solve_sign_changing(params.lam[i1], params.lam[i2], params.mu[i1], params.mu[i2],
                               params.p, grid)


def minimize_limit_problem(params: Params, grid: RadialGrid) -> LimitStructure:
    """Structured strong-competition limit: one segregated pair plus K-2 free ground states."""
    ws = ground_states(params, grid)
    free_e = np.array([w.energy for w in ws])
    cache = {}
    best = None
    for i1, i2 in combinations(range(params.K), 2):
        key = frozenset([(params.lam[i1], params.mu[i1]), (params.lam[i2], params.mu[i2])]) \
            if (params.lam[i1], params.mu[i1]) != (params.lam[i2], params.mu[i2]) \
            else ((params.lam[i1], params.mu[i1]),)
        if key not in cache:
            cache[key] = _pair_problem(params, i1, i2, grid)
        sc = cache[key]
        if (params.lam[i1], params.mu[i1]) != (sc.positive.problem.lam, sc.positive.problem.mu):
            pos, neg = sc.negative, sc.positive
        else:
            pos, neg = sc.positive, sc.negative
        level = sc.energy + free_e.sum() - free_e[i1] - free_e[i2]
        if best is None or level < best[0] - 1e-12:
            best = (level, (i1, i2), sc, pos, neg)
    level, pair, sc, pos, neg = best
    vals = np.vstack([w.profile.values for w in ws])
    inner_is_pos = sc.first_inside if pos is sc.positive else not sc.first_inside
    parts = []
    for idx, part, inner in ((pair[0], pos, inner_is_pos), (pair[1], neg, not inner_is_pos)):
        v = part.profile.values.copy()
        if inner:
            v[grid.nodes >= sc.radius] = 0.0
        else:
            v[grid.nodes <= sc.radius] = 0.0
        vals[idx] = v
        parts.append(RadialField(v, grid))
    free_idx = tuple(j for j in range(params.K) if j not in pair)
    return LimitStructure(
        pair=pair,
        interface_radius=sc.radius,
        level=float(level),
        segregated_parts=tuple(parts),
        free_components=tuple(ws[j].profile for j in free_idx),
        free_indices=free_idx,
        state=SystemState(vals, grid),
        pair_energy=sc.energy,
    )
