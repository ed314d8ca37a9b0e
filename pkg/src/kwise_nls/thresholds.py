"""Explicit constants: S̄, C̄, ubar-β, L and two-sided estimates of β̄."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .errors import InvalidArgumentError
from .radial import Params, RadialGrid, SystemState
from .scalar import Domain, ScalarProblem, compute_c, optimize_interface
from .system import integrals

N_STARTS = 64
DEFAULT_SEED = 1729


def reduced_quotient_F(s, K: int, q: float) -> float:
    """``((1 + Σs_i²)^{Kq/2} - 1 - Σs_i^{Kq}) / (K Π s_i^q)`` for ``K-1`` positive ``s_i``."""
    s = np.asarray(s, dtype=float)
    if s.shape != (K - 1,):
        raise InvalidArgumentError(f"need {K - 1} reduction variables, got shape {s.shape}")
    if not np.all(s > 0):
        raise InvalidArgumentError("reduction variables must be positive")
    p = K * q
    num = math.expm1(0.5 * p * math.log1p(float(np.sum(s * s)))) - float(np.sum(s**p))
    return num / (K * float(np.prod(s**q)))


def _F_log(x, K, q):
    """F at ``s = exp(x)``, evaluated in logs to stay finite over a wide range."""
    x = np.asarray(x, dtype=float)
    p = K * q
    j = int(np.argmax(x))
    xj = float(x[j])
    if xj <= 0:
        # all s_i <= 1: expand about 1
        L = 0.5 * p * math.log1p(float(np.exp(2 * x).sum()))
        num = math.expm1(L) - float(np.exp(p * x).sum())
        log_num = math.log(max(num, 1e-300))
    else:
        # factor out the dominant s_j^p so the leading terms cancel exactly
        rest = np.delete(x, j)
        log_R = float(logsumexp(np.concatenate([[-2 * xj], 2 * rest - 2 * xj])))
        if log_R < -30:
            log_e = math.log(0.5 * p) + log_R
        else:
            log_e = math.log(math.expm1(0.5 * p * math.log1p(math.exp(log_R))))
        A = p * xj + log_e
        sub = math.exp(-A) + float(np.exp(p * rest - A).sum())
        log_num = A + math.log1p(-min(sub, 1 - 1e-16))
    return math.exp(min(log_num - math.log(K) - q * float(x.sum()), 700.0))


@dataclass(frozen=True)
class ReducedMinimum:
    value: float
    argmin: np.ndarray
    n_distinct: int
    symmetric_value: float
    boundary_min: float
    n_starts: int
    seed: int

    @property
    def conjectured(self) -> float:
        return self.symmetric_value

    @property
    def agrees(self) -> bool:
        return abs(self.value - self.symmetric_value) <= 1e-6 * max(1.0, self.symmetric_value)


def symmetric_value(K: int, q: float) -> float:
    """``F(1, ..., 1) = K^{Kq/2 - 1} - 1``."""
    return K ** (K * q / 2 - 1) - 1


def minimize_reduced_quotient(K: int, q: float, n_starts: int = N_STARTS,
                              seed: int = DEFAULT_SEED) -> ReducedMinimum:
    """Global minimum of F over the positive orthant by multistart BFGS in log coordinates.

    Starts: ``n_starts`` log-uniform points in ``[1e-2, 1e2]^{K-1}``, the
    symmetric point, and points skewed along each coordinate.  The best value
    is checked against samples along rays ``s = ρθ`` with ρ small and large.
    """
    if int(K) != K or K < 3 or not q >= 1:
        raise InvalidArgumentError("need integer K >= 3 and q >= 1")
    m = K - 1
    rng = np.random.default_rng(seed)
    starts = list(rng.uniform(math.log(1e-2), math.log(1e2), size=(n_starts, m)))
    starts.append(np.zeros(m))
    for j in range(m):
        for skew in (-2.0, 2.0):
            x = np.zeros(m)
            x[j] = skew
            starts.append(x)
    found = []
    for x0 in starts:
        res = optimize.minimize(_F_log, x0, args=(K, q), method="BFGS",
                                options={"gtol": 1e-11, "maxiter": 2000})
        found.append((float(res.fun), res.x, bool(res.success)))
    found.sort(key=lambda t: t[0])
    best_val, best_x, _ = found[0]
    distinct = []
    for val, x, ok in found:
        if not ok or not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 30:
            continue
        if all(np.max(np.abs(x - y)) > 1e-3 for y in distinct):
            distinct.append(x)
    thetas = np.abs(rng.standard_normal((32, m))) + 1e-3
    thetas /= np.linalg.norm(thetas, axis=1, keepdims=True)
    bvals = [
        _F_log(np.log(rho * th), K, q)
        for th in thetas for rho in (1e-4, 1e-3, 1e3, 1e4)
    ]
    return ReducedMinimum(
        value=best_val,
        argmin=np.exp(best_x),
        n_distinct=len(distinct),
        symmetric_value=symmetric_value(K, q),
        boundary_min=float(min(bvals)),
        n_starts=len(starts),
        seed=seed,
    )


def compute_S_bar(params: Params, grid: RadialGrid) -> float:
    """``S̄ = min_i c_{Kq,λ_i,μ_i}``."""
    vals = {}
    for lam, mu in zip(params.lam, params.mu):
        if (lam, mu) not in vals:
            vals[(lam, mu)] = compute_c(ScalarProblem(params.p, lam, mu), grid)
    return min(vals.values())


@dataclass(frozen=True)
class CBar:
    value: float
    partition: str
    radii: tuple
    infimum: float
    prefactor: float


def _sobolev_power(domain, p, grid):
    return compute_c(ScalarProblem(p, 1.0, 1.0, domain), grid) ** (p / (p - 2))


def _annuli_sum(radii, p, grid, K):
    edges = np.cumsum(radii)
    doms = [Domain.ball(edges[0])]
    doms += [Domain.annulus(edges[k], edges[k + 1]) for k in range(K - 2)]
    doms.append(Domain.exterior(edges[-1]))
    return sum(_sobolev_power(dm, p, grid) for dm in doms)


def compute_C_bar(params: Params, grid: RadialGrid, partition: str = "ball-exterior") -> CBar:
    """Upper bound for C̄ from an explicit radial partition with empty common intersection.

    ``partition="ball-exterior"`` uses ``ball(R), exterior(R)`` and K-2 copies
    of the whole space, with R optimized; ``"annuli"`` uses K disjoint shells.
    The Sobolev constants are Dirichlet ones on each set.
    """
    p = params.p
    e = p / (p - 2)
    pref = max((1 + lam**2) ** e / mu ** (2 / (p - 2)) for lam, mu in zip(params.lam, params.mu))
    cache = {}

    def sob(domain):
        if domain not in cache:
            cache[domain] = _sobolev_power(domain, p, grid)
        return cache[domain]

    if partition == "ball-exterior":
        full = sob(Domain.full())

        def total(R):
            return sob(Domain.ball(R)) + sob(Domain.exterior(R)) + (params.K - 2) * full

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            R, inf, _, _ = optimize_interface(total, grid.rmax)
        radii = (float(R),)
    elif partition == "annuli":
        K = params.K
        x0 = np.log(np.full(K - 1, 0.8))
        res = optimize.minimize(lambda x: _annuli_sum(np.exp(x), p, grid, K), x0,
                                method="Nelder-Mead",
                                options={"xatol": 1e-3, "fatol": 1e-8, "maxiter": 400})
        inf = float(res.fun)
        radii = tuple(float(r) for r in np.cumsum(np.exp(res.x)))
    else:
        raise InvalidArgumentError(f"unknown partition {partition!r}")
    value = (p - 2) / (2 * p) * pref * inf
    return CBar(float(value), partition, radii, float(inf), float(pref))


def compute_ubar_beta(params: Params, s_bar: float, c_bar: float) -> float:
    """Existence threshold ubar-β for positive radial minimizers at small β > 0."""
    if not (s_bar > 0 and c_bar > 0):
        raise InvalidArgumentError("S̄ and C̄ must be positive")
    if params.q < 2:
        warnings.warn("ubar-beta is only meaningful for q >= 2", RuntimeWarning, stacklevel=2)
    K, q, p = params.K, params.q, params.p
    gm = float(np.prod(np.asarray(params.mu) ** (1.0 / K)))
    return s_bar * (p - 2) / (2 * q * (K - 1)) * gm * (4 * p / (p - 2) * c_bar / s_bar) ** ((2 - p) / 2)


def compute_L(params: Params, s_bar: float, c_bar: float) -> float:
    """Auxiliary bound L (defined for q = 2 only)."""
    if params.q != 2:
        raise InvalidArgumentError(f"L is defined for q = 2 only, got q = {params.q}")
    if not (s_bar > 0 and c_bar > 0):
        raise InvalidArgumentError("S̄ and C̄ must be positive")
    K = params.K
    gm = float(np.prod(np.asarray(params.mu) ** (1.0 / K)))
    return gm * (K - 1) ** (K - 1) * s_bar**K / (2 ** (K - 1) * K ** (K - 1) * c_bar ** (K - 1))


def beta_bar_quotient(u: SystemState, params: Params, s_bar: float) -> float:
    """The quotient whose infimum over states with non-zero product is β̄."""
    a, b, P = integrals(u, params)
    if not P > 0:
        raise InvalidArgumentError("the product of the components vanishes")
    p = params.p
    return float((s_bar ** (-p / 2) * a.sum() ** (p / 2) - b.sum()) / (params.K * P))


def _amplitude_optimized(a1, b1, P1, K, q, p, s_bar):
    """Min over amplitudes ``u_i = t_i v_i`` of the β̄ quotient, given the integrals of v."""

    def f(x):
        t = np.exp(np.concatenate([[0.0], x]))
        a = a1 * t**2
        b = b1 * t**p
        P = P1 * float(np.prod(t**q))
        return (s_bar ** (-p / 2) * a.sum() ** (p / 2) - b.sum()) / (K * P)

    x0 = 0.5 * np.log(a1[0] / a1[1:])
    best = None
    for start in (x0, np.zeros(K - 1)):
        res = optimize.minimize(f, start, method="BFGS", options={"gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    return float(best.fun), np.exp(np.concatenate([[0.0], best.x]))


@dataclass(frozen=True)
class BetaBarSample:
    value: float
    label: str
    amplitudes: np.ndarray


def default_trial_family(params: Params, grid: RadialGrid, dilations=(0.5, 0.75, 1.5, 2.0)):
    """Own ground states, the common S̄-profile, and dilations of the latter."""
    from .minimizer import ground_states

    ws = ground_states(params, grid)
    family = [("own", SystemState(np.vstack([w.profile.values for w in ws]), grid))]
    k = int(np.argmin([w.c_value for w in ws]))
    wbar = ws[k].profile.values
    family.append(("common", SystemState(np.vstack([wbar] * params.K), grid)))
    r = grid.nodes
    for s in dilations:
        v = np.interp(r / s, r, wbar, right=0.0)
        family.append((f"dilated-{s:g}", SystemState(np.vstack([v] * params.K), grid)))
    return family


def estimate_beta_bar_upper(params: Params, grid: RadialGrid, family=None, s_bar=None):
    """Best sampled value of the β̄ quotient (an upper bound for β̄).

    Each trial state is first optimized over componentwise amplitudes.
    Returns ``(value, samples)``.
    """
    if s_bar is None:
        s_bar = compute_S_bar(params, grid)
    if family is None:
        family = default_trial_family(params, grid)
    samples = []
    for label, u in family:
        a, b, P = integrals(u, params)
        if not P > 0:
            warnings.warn(f"trial state {label!r} has zero product; skipped", RuntimeWarning)
            continue
        val, amps = _amplitude_optimized(a, b, P, params.K, params.q, params.p, s_bar)
        samples.append(BetaBarSample(val, label, amps))
    if not samples:
        raise InvalidArgumentError("no trial state with non-zero product")
    return min(s.value for s in samples), samples


def beta_bar_lower(params: Params, reduced: ReducedMinimum | None = None) -> float:
    """``(Π μ_i)^{1/K}`` times the reduced minimum."""
    if reduced is None:
        reduced = minimize_reduced_quotient(params.K, params.q)
    return float(np.prod(np.asarray(params.mu) ** (1.0 / params.K)) * reduced.value)


@dataclass(frozen=True)
class ThresholdReport:
    s_bar: float
    c_bar: float
    ubar_beta: float
    L_value: float | None
    beta_bar_lower: float
    beta_bar_upper: float
    provenance: dict = field(default_factory=dict)


def threshold_report(params: Params, grid: RadialGrid) -> ThresholdReport:
    s_bar = compute_S_bar(params, grid)
    cb = compute_C_bar(params, grid)
    red = minimize_reduced_quotient(params.K, params.q)
    upper, samples = estimate_beta_bar_upper(params, grid, s_bar=s_bar)
    L = compute_L(params, s_bar, cb.value) if params.q == 2 else None
    prov = {
        "c_bar_partition": cb.partition,
        "c_bar_radii": cb.radii,
        "reduced_minimum": red.value,
        "reduced_argmin": tuple(red.argmin),
        "reduced_distinct_minima": red.n_distinct,
        "reduced_seed": red.seed,
        "beta_bar_trials": tuple((s.label, s.value) for s in samples),
    }
    return ThresholdReport(
        s_bar=s_bar,
        c_bar=cb.value,
        ubar_beta=compute_ubar_beta(params, s_bar, cb.value),
        L_value=L,
        beta_bar_lower=beta_bar_lower(params, red),
        beta_bar_upper=upper,
        provenance=prov,
    )
