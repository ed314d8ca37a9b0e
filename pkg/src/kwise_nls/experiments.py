"""Experiment driver: configuration, β-scans and flat-file output."""
from __future__ import annotations

import configparser
import csv
import io
import math
import platform
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import ConvergenceError, InvalidArgumentError, NotProjectableError
from .minimizer import (MinimizeOptions, Solution, component_lp, default_seeds,
                        ground_states, minimize_limit_problem, minimize_on_Mr,
                        minimize_on_nehari, semi_trivial_ceiling)
from .radial import Params, RadialGrid, SystemState, make_grid, product_integral
from .scalar import ScalarProblem, nehari_energy, solve_scalar_ground_state, soliton_1d
from .thresholds import minimize_reduced_quotient, reduced_quotient_F, threshold_report

EXPERIMENTS = ("scalar", "thresholds", "dichotomy", "sweep", "limit")

DEFAULTS = {
    "run": {
        "experiment": ("thresholds", "one of scalar, thresholds, dichotomy, sweep, limit"),
        "seeds": ("20240611", "comma-separated integer seeds for the random starts"),
        "output_dir": ("results", "directory receiving CSV, metadata and plot data"),
        "jobs": ("1", "worker processes for independent multistart runs"),
    },
    "params": {
        "d": ("2", "space dimension"),
        "K": ("3", "number of components (>= 3)"),
        "q": ("2", "coupling exponent; self-interaction exponent is K*q"),
        "lam": ("1", "lambda_i: one value for all components or K comma-separated values"),
        "mu": ("1", "mu_i: one value for all components or K comma-separated values"),
    },
    "grid": {
        "rmax": ("30", "outer radius of the radial grid"),
        "n": ("4000", "number of grid cells"),
    },
    "scalar": {
        "p": ("", "exponent of the scalar equation; empty means K*q"),
    },
    "sweep": {
        "betas": ("-1, -10, -100, -1000", "strictly decreasing negative couplings"),
    },
    "dichotomy": {
        "betas": ("", "couplings to scan; empty means 8 points up to 2x the upper bound"),
        "points": ("8", "number of points of the automatic grid"),
    },
    "tolerances": {
        "ftol": ("1e-12", "relative energy decrease that counts as a stalled step"),
        "gtol": ("1e-10", "relative gradient residual that stops the descent"),
        "maxiter": ("4000", "maximum descent steps per start"),
        "classify": ("1e-3", "relative tolerance for the dichotomy bracket"),
    },
}


class ConfigError(InvalidArgumentError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        loc = f"{path or '<config>'}:{line}: " if line else f"{path or '<config>'}: "
        super().__init__(loc + message)
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    params: Params
    rmax: float
    n: int
    beta_schedule: tuple
    seeds: tuple
    tolerances: dict
    output_dir: Path
    experiment: str
    jobs: int = 1
    scalar_p: float | None = None
    dichotomy_points: int = 8
    echo: dict = field(default_factory=dict)

    @property
    def grid(self) -> RadialGrid:
        return make_grid(self.rmax, self.n, self.params.d)

    def options(self) -> MinimizeOptions:
        t = self.tolerances
        return MinimizeOptions(maxiter=int(t["maxiter"]), ftol=t["ftol"], gtol=t["gtol"],
                               seed=self.seeds[0])


def defaults_reference() -> str:
    """Commented INI listing every key with its default."""
    out = ["# Configuration reference: every key and its default value.", ""]
    for sec, keys in DEFAULTS.items():
        out.append(f"[{sec}]")
        for k, (v, doc) in keys.items():
            out.append(f"# {doc}")
            out.append(f"{k} = {v}")
        out.append("")
    return "\n".join(out)


def _key_line(text, section, key):
    sec = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            sec = m.group(1).strip()
            continue
        if sec == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return no
    return None


def _floats(s):
    return [float(x) for x in s.replace(";", ",").split(",") if x.strip()]


def parse_config(text: str, path=None, overrides=None) -> ExperimentConfig:
    """Parse INI text into an :class:`ExperimentConfig`, with line-numbered errors."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], line, path) from None
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]", _section_line(text, sec), path)
        for key in cp[sec]:
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", _key_line(text, sec, key), path)
    merged = {sec: {k: v for k, (v, _) in keys.items()} for sec, keys in DEFAULTS.items()}
    for sec in cp.sections():
        merged[sec].update(cp[sec])
    for (sec, key), val in (overrides or {}).items():
        merged[sec][key] = str(val)

    def get(sec, key, conv):
        raw = merged[sec][key]
        try:
            return conv(raw)
        except (ValueError, InvalidArgumentError) as exc:
            raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}", _key_line(text, sec, key), path) \
                from None

    experiment = get("run", "experiment", str).strip()
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}", _key_line(text, "run", "experiment"),
                          path)
    K = get("params", "K", int)
    d = get("params", "d", int)
    q = get("params", "q", float)

    def per_component(raw):
        vals = _floats(raw)
        if len(vals) == 1:
            vals = vals * K
        if len(vals) != K:
            raise ValueError(f"expected 1 or {K} values")
        return tuple(vals)

    lam = get("params", "lam", per_component)
    mu = get("params", "mu", per_component)
    try:
        params = Params(d=d, K=K, q=q, lam=lam, mu=mu)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc), _section_line(text, "params"), path) from None
    rmax = get("grid", "rmax", float)
    n = get("grid", "n", int)
    try:
        make_grid(rmax, n, d)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc), _section_line(text, "grid"), path) from None
    seeds = get("run", "seeds", lambda s: tuple(int(x) for x in s.split(",") if x.strip()))
    if not seeds:
        raise ConfigError("at least one seed is required", _key_line(text, "run", "seeds"), path)
    jobs = get("run", "jobs", int)
    if jobs < 1:
        raise ConfigError("jobs must be >= 1", _key_line(text, "run", "jobs"), path)
    tol = {k: get("tolerances", k, float) for k in DEFAULTS["tolerances"]}
    for k, v in tol.items():
        if not v > 0:
            raise ConfigError(f"tolerance {k} must be positive", _key_line(text, "tolerances", k),
                              path)
    p_raw = merged["scalar"]["p"].strip()
    scalar_p = get("scalar", "p", float) if p_raw else None
    if experiment == "sweep":
        betas = get("sweep", "betas", lambda s: tuple(_floats(s)))
        line = _key_line(text, "sweep", "betas")
        if not betas:
            raise ConfigError("beta schedule must be non-empty", line, path)
        if any(b >= 0 for b in betas) or any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ConfigError("sweep betas must be negative and strictly decreasing", line, path)
    elif experiment == "dichotomy":
        betas = get("dichotomy", "betas", lambda s: tuple(_floats(s)))
        if any(b <= 0 for b in betas):
            raise ConfigError("dichotomy betas must be positive",
                              _key_line(text, "dichotomy", "betas"), path)
    else:
        betas = ()
    points = get("dichotomy", "points", int)
    return ExperimentConfig(
        params=params, rmax=rmax, n=n, beta_schedule=betas, seeds=seeds, tolerances=tol,
        output_dir=Path(merged["run"]["output_dir"]), experiment=experiment, jobs=jobs,
        scalar_p=scalar_p, dichotomy_points=points, echo=merged,
    )


def _section_line(text, section):
    for no, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{section}]":
            return no
    return None


def load_config(path, overrides=None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse_config(text, str(path), overrides)


# ---------------------------------------------------------------- output

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_plot_data(path: Path, x, y, header=""):
    lines = [f"# {header}"] if header else []
    lines += ["%.17g %.17g" % (a, b) for a, b in zip(x, y)]
    path.write_text("\n".join(lines) + "\n")


def write_metadata(path: Path, config: ExperimentConfig, extra: dict, wall: float):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for sec, vals in config.echo.items():
        cp[sec] = {k: str(v) for k, v in vals.items()}
    cp["provenance"] = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "seed": str(config.seeds[0]),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "wall_time_s": "%.3f" % wall,
    }
    cp["results"] = {k: _fmt(v) for k, v in extra.items()}
    with path.open("w") as fh:
        cp.write(fh)


# ---------------------------------------------------------------- records

@dataclass(frozen=True)
class SweepRecord:
    beta: float
    level: float
    interaction: float
    classification: str
    lp_norms: tuple
    seed: int
    start: str
    converged: bool
    wall_time: float = 0.0
    error: str = ""
    state: SystemState | None = field(default=None, repr=False, compare=False)

    @property
    def scaled_interaction(self) -> float:
        return abs(self.beta) * self.interaction


def pair_overlap(u: SystemState, a: int, b: int, p: float) -> float:
    """``∫ min(|u_a|,|u_b|)^p`` over the smaller of ``∫|u_a|^p``, ``∫|u_b|^p``."""
    g = u.grid
    va, vb = np.abs(u.values[a]), np.abs(u.values[b])
    num = g.integrate(np.minimum(va, vb) ** p)
    den = min(g.integrate(va**p), g.integrate(vb**p))
    return float(num / den)


def overlaps(u: SystemState, p: float) -> dict:
    K = u.K
    return {(a, b): pair_overlap(u, a, b, p) for a in range(K) for b in range(a + 1, K)}


def _seed_battery(params, grid, constraint, config, limit=None):
    seeds = []
    for k, s in enumerate(config.seeds):
        batt = default_seeds(params, grid, constraint, s, limit=limit)
        seeds += batt if k == 0 else [b for b in batt if b[0].startswith("random")]
    return seeds


def _record(beta, sol: Solution, params, seed, wall):
    return SweepRecord(
        beta=beta, level=sol.level, interaction=product_integral(sol.state, params.q),
        classification=str(sol.classification), lp_norms=tuple(component_lp(sol.state, params)),
        seed=seed, start=sol.label, converged=sol.converged, wall_time=wall, state=sol.state,
    )


@dataclass(frozen=True)
class StrongCompetitionResult:
    records: tuple
    limit: object
    comparison: dict


def run_strong_competition(config: ExperimentConfig) -> StrongCompetitionResult:
    """β-sweep toward -∞ with warm starts, compared against the structured limit."""
    betas = config.beta_schedule
    if not betas or any(b >= 0 for b in betas) or any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
        raise InvalidArgumentError("beta schedule must be negative and strictly decreasing")
    grid = config.grid
    base = config.params
    limit = minimize_limit_problem(base, grid)
    opts = config.options()
    records = []
    prev = None
    for beta in betas:
        params = base.with_beta(beta)
        seeds = _seed_battery(params, grid, "M", config, limit)
        if prev is not None:
            seeds.insert(0, ("warm", prev))
        t0 = time.perf_counter()
        try:
            sol = minimize_on_Mr(params, init=seeds, opts=opts, jobs=config.jobs)
        except (ConvergenceError, NotProjectableError) as exc:
            records.append(SweepRecord(beta, math.nan, math.nan, "failed", (), config.seeds[0],
                                       "", False, time.perf_counter() - t0, str(exc)))
            continue
        records.append(_record(beta, sol, params, config.seeds[0], time.perf_counter() - t0))
        prev = sol.state
    comparison = {"limit_level": limit.level, "limit_pair": limit.pair,
                  "limit_radius": limit.interface_radius}
    done = [r for r in records if r.state is not None]
    if done:
        last = done[-1]
        ov = overlaps(last.state, base.p)
        pair = min(ov, key=ov.get)
        ws = ground_states(base, grid)
        free = [j for j in range(base.K) if j not in pair]
        free_err = []
        for j in free:
            u, w = last.state.values[j], ws[j].profile.values
            amp = float(np.dot(u, w) / np.dot(w, w))
            free_err.append(float(np.max(np.abs(u - amp * w)) / np.max(np.abs(w))))
        comparison.update(
            final_beta=last.beta,
            final_level=last.level,
            relative_gap=abs(last.level - limit.level) / limit.level,
            segregated_pair=pair,
            pair_overlap=ov[pair],
            other_overlaps=tuple(v for k, v in sorted(ov.items()) if k != pair),
            free_components=tuple(free),
            free_component_error=tuple(free_err),
            interface_radius=_interface_radius(last.state, pair),
        )
    return StrongCompetitionResult(tuple(records), limit, comparison)


def _interface_radius(u: SystemState, pair):
    a, b = u.values[pair[0]], u.values[pair[1]]
    diff = np.abs(a) - np.abs(b)
    sign = np.sign(diff)
    idx = np.flatnonzero(sign[:-1] * sign[1:] < 0)
    if len(idx) == 0:
        return math.nan
    i = idx[0]
    r = u.grid.nodes
    return float(r[i] + (r[i + 1] - r[i]) * diff[i] / (diff[i] - diff[i + 1]))


@dataclass(frozen=True)
class DichotomyResult:
    records: tuple
    ceiling: float
    beta_bar_lower: float
    beta_bar_upper: float
    crossing: tuple
    consistent: bool


def run_dichotomy_scan(config: ExperimentConfig, report=None) -> DichotomyResult:
    """Classify best Nehari minimizers over a β-grid and bracket the crossing."""
    grid = config.grid
    base = config.params
    if report is None:
        report = threshold_report(base, grid)
    lower, upper = report.beta_bar_lower, report.beta_bar_upper
    betas = config.beta_schedule or tuple(
        float(b) for b in np.linspace(2 * upper / config.dichotomy_points, 2 * upper,
                                      config.dichotomy_points))
    if sorted(betas) != list(betas):
        raise InvalidArgumentError("dichotomy betas must be increasing")
    ceiling = semi_trivial_ceiling(base, grid)
    opts = config.options()
    records = []
    prev = None
    for beta in betas:
        params = base.with_beta(beta)
        seeds = _seed_battery(params, grid, "N", config)
        if prev is not None:
            seeds.insert(0, ("warm", prev))
        t0 = time.perf_counter()
        try:
            sol = minimize_on_nehari(params, init=seeds, opts=opts, jobs=config.jobs)
        except (ConvergenceError, NotProjectableError) as exc:
            records.append(SweepRecord(beta, math.nan, math.nan, "failed", (), config.seeds[0],
                                       "", False, time.perf_counter() - t0, str(exc)))
            continue
        records.append(_record(beta, sol, params, config.seeds[0], time.perf_counter() - t0))
        prev = sol.state
    semi = [r.beta for r in records if r.classification.startswith("semi")]
    full = [r.beta for r in records if r.classification == "fully-non-trivial"]
    lo = max([b for b in semi if not full or b < min(full)], default=0.0)
    hi = min(full, default=math.inf)
    tol = config.tolerances["classify"]
    consistent = lo <= upper * (1 + tol) and hi >= lower * (1 - tol)
    return DichotomyResult(tuple(records), ceiling, lower, upper, (lo, hi), consistent)


# ---------------------------------------------------------------- experiments

def _sweep_rows(records, config, extra=None):
    rows = []
    for k, r in enumerate(records):
        row = {
            "beta": r.beta, "level": r.level, "interaction": r.interaction,
            "scaled_interaction": r.scaled_interaction, "classification": r.classification,
            "seed": r.seed, "start": r.start, "converged": r.converged,
            "rmax": config.rmax, "n": config.n, "error": r.error,
        }
        for i in range(config.params.K):
            row[f"lp_{i + 1}"] = r.lp_norms[i] if r.lp_norms else math.nan
        if extra:
            row.update(extra[k])
        rows.append(row)
    return rows


def _experiment_scalar(config, out):
    grid = config.grid
    prm = config.params
    p = config.scalar_p or prm.p
    rows = []
    seen = []
    for i, (lam, mu) in enumerate(zip(prm.lam, prm.mu)):
        if (lam, mu) in seen:
            continue
        seen.append((lam, mu))
        sol = solve_scalar_ground_state(ScalarProblem(p, lam, mu), grid)
        err = math.nan
        if prm.d == 1:
            err = float(np.max(np.abs(sol.profile.values - soliton_1d(grid.nodes, p, lam, mu))))
        rows.append({
            "d": prm.d, "p": p, "lam": lam, "mu": mu, "c_value": sol.c_value,
            "energy": sol.energy,
            "energy_identity_error": abs(sol.energy - nehari_energy(sol.c_value, p)) / sol.energy,
            "nehari_defect": sol.nehari_defect(), "residual": sol.residual, "peak": sol.peak,
            "sech_max_error": err, "seed": config.seeds[0], "rmax": config.rmax, "n": config.n,
        })
        write_plot_data(out / f"scalar_profile_{len(seen)}.dat", grid.nodes, sol.profile.values,
                        f"r w(r) for p={p:g} lambda={lam:g} mu={mu:g}")
    cols = list(rows[0])
    return cols, rows, {"profiles": len(rows)}


def _experiment_thresholds(config, out):
    prm, grid = config.params, config.grid
    rep = threshold_report(prm, grid)
    red = minimize_reduced_quotient(prm.K, prm.q)
    row = {
        "K": prm.K, "q": prm.q, "d": prm.d, "s_bar": rep.s_bar, "c_bar": rep.c_bar,
        "c_bar_radius": rep.provenance["c_bar_radii"][0], "ubar_beta": rep.ubar_beta,
        "L": rep.L_value, "reduced_minimum": red.value, "conjectured_minimum": red.symmetric_value,
        "reduced_distinct_minima": red.n_distinct, "beta_bar_lower": rep.beta_bar_lower,
        "beta_bar_upper": rep.beta_bar_upper, "seed": config.seeds[0], "rmax": config.rmax,
        "n": config.n,
    }
    s = np.geomspace(1e-2, 1e2, 200)
    if prm.K == 3:
        write_plot_data(out / "reduced_quotient_diagonal.dat", s,
                        [reduced_quotient_F(np.array([x, x]), 3, prm.q) for x in s],
                        "s F(s, s)")
    return list(row), [row], {"reduced_argmin": " ".join("%.17g" % x for x in red.argmin)}


def _experiment_dichotomy(config, out):
    res = run_dichotomy_scan(config)
    extra = [{"ceiling": res.ceiling,
              "relative_gap": (res.ceiling - r.level) / res.ceiling} for r in res.records]
    rows = _sweep_rows(res.records, config, extra)
    write_plot_data(out / "dichotomy_levels.dat", [r.beta for r in res.records],
                    [r.level for r in res.records], "beta best-level")
    meta = {"beta_bar_lower": res.beta_bar_lower, "beta_bar_upper": res.beta_bar_upper,
            "crossing_low": res.crossing[0], "crossing_high": res.crossing[1],
            "crossing_consistent": res.consistent, "ceiling": res.ceiling}
    return list(rows[0]), rows, meta


def _experiment_sweep(config, out):
    res = run_strong_competition(config)
    extra = [{"gap_to_limit": abs(r.level - res.limit.level) / res.limit.level}
             for r in res.records]
    rows = _sweep_rows(res.records, config, extra)
    write_plot_data(out / "sweep_scaled_interaction.dat", [abs(r.beta) for r in res.records],
                    [r.scaled_interaction for r in res.records], "|beta| |beta|*interaction")
    last = [r for r in res.records if r.state is not None]
    if last:
        for i, v in enumerate(last[-1].state.values):
            write_plot_data(out / f"sweep_final_u{i + 1}.dat", config.grid.nodes, v,
                            f"r u_{i + 1}(r) at beta={last[-1].beta:g}")
    meta = {k: (tuple(i + 1 for i in v) if k in ("limit_pair", "segregated_pair",
                                                   "free_components") else v)
            for k, v in res.comparison.items()}
    return list(rows[0]), rows, meta


def _experiment_limit(config, out):
    prm, grid = config.params, config.grid
    lim = minimize_limit_problem(prm, grid)
    row = {"pair_1": lim.pair[0] + 1, "pair_2": lim.pair[1] + 1,
           "interface_radius": lim.interface_radius, "level": lim.level,
           "pair_energy": lim.pair_energy, "seed": config.seeds[0], "rmax": config.rmax,
           "n": config.n}
    for i, v in enumerate(lim.state.values):
        write_plot_data(out / f"limit_u{i + 1}.dat", grid.nodes, v, f"r u_{i + 1}(r)")
    return list(row), [row], {"free_components": " ".join(str(j + 1) for j in lim.free_indices)}


_RUNNERS = {
    "scalar": _experiment_scalar,
    "thresholds": _experiment_thresholds,
    "dichotomy": _experiment_dichotomy,
    "sweep": _experiment_sweep,
    "limit": _experiment_limit,
}


def run_experiment(config: ExperimentConfig, out: Path | None = None) -> Path:
    """Run the configured experiment and write ``<experiment>.csv`` plus sidecars.

    Returns the CSV path.  Solver failures in sweeps are recorded per row;
    other solver failures propagate.
    """
    out = Path(out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    cols, rows, meta = _RUNNERS[config.experiment](config, out)
    wall = time.perf_counter() - t0
    path = out / f"{config.experiment}.csv"
    path.write_text(csv_text(cols, rows))
    write_metadata(out / f"{config.experiment}.meta.ini", config, meta, wall)
    return path
