"""Config-driven runs, trade-off sweeps and complexity-exponent fits.

An :class:`ExperimentConfig` names a problem, an algorithm and the schedule
knobs. ``resolve`` turns it into a concrete (problem, profile, schedule)
triple; everything downstream (single runs, nu sweeps, horizon curves) is
built from that.

Complexity curves use a horizon protocol: for every target eps and seed the
algorithm is run at increasing horizons ``T`` on a geometric grid, each run
getting the (I, b) pair and step size tuned for its own ``T``, and the cost
is read off the first run that reaches eps.
"""

import csv
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.stats import linregress

from .diagnostics import first_hit
from .engine import RunRecord, _json_default, run_fedavg, run_stem
from .errors import ConfigurationError, FitError
from .problems import ProblemInstance, SmoothnessProfile, default_probes, make_problem, measure_profile
from .schedules import (
    MODES,
    PRACTICAL,
    THEORETICAL,
    TradeoffWarning,
    constant_schedule,
    eta_of_t,
    fedavg_eta,
    fedavg_tradeoff,
    pad_horizon,
    practical_schedule,
    stem_tradeoff,
    theoretical_schedule,
)

STEM = "stem"
FEDAVG = "fedavg"
MINIBATCH_SGD = "minibatch-sgd"
ALGORITHMS = (STEM, FEDAVG, MINIBATCH_SGD)

#: Heterogeneous logistic benchmark used by the complexity-exponent checks.
REFERENCE_PROBLEM = {
    "family": "logistic",
    "dim": 20,
    "K": 8,
    "n_per_worker": 64,
    "class_skew": 0.8,
    "reg_lambda": 0.3,
    "separation": 0.25,
    "feature_scale": 1.5,
    "seed": 0,
}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    algorithm: str = STEM
    mode: str = PRACTICAL
    T: int = 1000
    nu: Optional[float] = None
    I: Optional[int] = None
    b: Optional[int] = None
    B: Optional[int] = None
    eta: Optional[float] = None
    eta_scale: float = 1.0
    kappa: float = 0.1
    cbar: float = 1.0
    epoch_len: int = 1
    sigma: Optional[float] = None
    L: Optional[float] = None
    eps_targets: tuple = (1e-2,)
    seeds: tuple = (0,)
    x0: Optional[tuple] = None
    exact: bool = False
    n_threads: int = 1
    diagnostics: bool = True
    horizon_min: int = 32
    horizon_max: int = 1 << 16

    def __post_init__(self):
        _validate(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a JSON object", field="<root>")
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigurationError(f"unknown config field {key!r}", field=key)
        if "problem" not in raw:
            raise ConfigurationError("missing required field 'problem'", field="problem")
        data = dict(raw)
        for key in ("eps_targets", "seeds", "x0"):
            if data.get(key) is not None:
                if not isinstance(data[key], (list, tuple)):
                    raise ConfigurationError(f"{key} must be a list", field=key)
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("eps_targets", "seeds", "x0"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"config is not valid JSON: {exc}", field="<root>") from exc
        return cls.from_dict(raw)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def _require(cond, field_name, message):
    if not cond:
        raise ConfigurationError(message, field=field_name)


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _validate(c: ExperimentConfig) -> None:
    _require(isinstance(c.problem, dict) and "family" in c.problem, "problem",
             "problem must be an object with a 'family' key")
    _require(c.algorithm in ALGORITHMS, "algorithm", f"algorithm must be one of {ALGORITHMS}")
    _require(c.mode in MODES, "mode", f"mode must be one of {MODES}")
    _require(_is_int(c.T) and c.T >= 1, "T", "T must be a positive integer")
    for name in ("I", "b", "B"):
        v = getattr(c, name)
        _require(v is None or (_is_int(v) and v >= 1), name, f"{name} must be a positive integer")
    _require(_is_int(c.epoch_len) and c.epoch_len >= 1, "epoch_len", "epoch_len must be a positive integer")
    _require(_is_int(c.n_threads) and c.n_threads >= 1, "n_threads", "n_threads must be a positive integer")
    _require(c.nu is None or 0.0 <= c.nu <= 1.0, "nu", "nu must lie in [0, 1]")
    _require(c.eta is None or c.eta > 0, "eta", "eta must be positive")
    _require(c.eta_scale > 0, "eta_scale", "eta_scale must be positive")
    _require(c.kappa > 0, "kappa", "kappa must be positive")
    _require(c.cbar > 0, "cbar", "cbar must be positive")
    _require(c.sigma is None or c.sigma >= 0, "sigma", "sigma must be nonnegative")
    _require(c.L is None or c.L > 0, "L", "L must be positive")
    _require(len(c.eps_targets) > 0 and all(isinstance(e, (int, float)) and e > 0 for e in c.eps_targets),
             "eps_targets", "eps_targets must be a nonempty list of positive reals")
    _require(len(c.seeds) > 0 and all(_is_int(s) and s >= 0 for s in c.seeds), "seeds",
             "seeds must be a nonempty list of nonnegative integers")
    _require(_is_int(c.horizon_min) and _is_int(c.horizon_max) and 1 <= c.horizon_min <= c.horizon_max,
             "horizon_min", "need 1 <= horizon_min <= horizon_max")


# resolution ---------------------------------------------------------------------


@dataclass
class Resolved:
    problem: ProblemInstance
    profile: SmoothnessProfile
    schedule: object
    pad: int

    def echo(self) -> dict:
        """The knobs a reader needs to reproduce the run."""
        s = self.schedule
        return {"I": s.I, "b": s.b, "B": s.B, "T": s.T, "pad": self.pad, "eta_1": eta_of_t(s, 1),
                "c": s.c, "mode": s.mode, "nu": s.nu}


def build_problem(config: ExperimentConfig) -> ProblemInstance:
    return make_problem(config.problem)


def problem_profile(config: ExperimentConfig, p: ProblemInstance) -> SmoothnessProfile:
    """Measured profile with any explicit ``sigma``/``L`` overrides applied."""
    if config.sigma is not None and config.L is not None:
        return SmoothnessProfile(sigma=config.sigma, zeta=float("nan"), L_hat=config.L, f_star_hat=float("nan"))
    prof = measure_profile(p, default_probes(p))
    return SmoothnessProfile(
        sigma=prof.sigma if config.sigma is None else config.sigma,
        zeta=prof.zeta,
        L_hat=prof.L_hat if config.L is None else config.L,
        f_star_hat=prof.f_star_hat,
    )


def resolve_schedule(config: ExperimentConfig, K: int, profile: SmoothnessProfile, T: Optional[int] = None):
    """Schedule for ``config`` at horizon ``T``; returns ``(schedule, pad)``."""
    T = config.T if T is None else T
    algo = config.algorithm
    I, b = 1, 1
    if config.nu is not None and algo != MINIBATCH_SGD:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TradeoffWarning)
            I, b = (fedavg_tradeoff if algo == FEDAVG else stem_tradeoff)(config.nu, T, K)
    if config.I is not None:
        I = config.I
    if config.b is not None:
        b = config.b
    if algo == MINIBATCH_SGD:
        I = 1
    T, pad = pad_horizon(T, I)
    sigma, L = profile.sigma, profile.L_hat
    if algo == FEDAVG:
        eta = config.eta if config.eta is not None else config.eta_scale * fedavg_eta(b, K, T)
        return constant_schedule(b, K, I, T, eta=eta, L=L, nu=config.nu), pad
    if config.mode == THEORETICAL:
        s = theoretical_schedule(sigma, L, b, K, I, T, nu=config.nu)
        if config.B is not None:
            s = replace(s, B=config.B)
    elif config.mode == PRACTICAL:
        s = practical_schedule(config.kappa, config.cbar, sigma, L, b, K, I, T,
                               epoch_len=config.epoch_len, B=config.B, nu=config.nu)
    else:
        eta = config.eta if config.eta is not None else config.eta_scale * fedavg_eta(b, K, T)
        s = constant_schedule(b, K, I, T, eta=eta, L=L, nu=config.nu)
        s = replace(s, B=config.B if config.B is not None else b * I)
    if algo == MINIBATCH_SGD:
        s = s.with_momentum(1.0)
    return s, pad


def resolve(config: ExperimentConfig, problem: Optional[ProblemInstance] = None,
            profile: Optional[SmoothnessProfile] = None, T: Optional[int] = None) -> Resolved:
    p = build_problem(config) if problem is None else problem
    prof = problem_profile(config, p) if profile is None else profile
    s, pad = resolve_schedule(config, p.workers, prof, T)
    return Resolved(problem=p, profile=prof, schedule=s, pad=pad)


def execute(config: ExperimentConfig, r: Resolved, seed: int, diagnostics: Optional[bool] = None,
            stop_below: Optional[float] = None) -> RunRecord:
    runner = run_fedavg if config.algorithm == FEDAVG else run_stem
    x0 = None if config.x0 is None else np.asarray(config.x0, dtype=float)
    rec = runner(r.problem, r.schedule, seed=seed, x0=x0, exact=config.exact, n_threads=config.n_threads,
                 diagnostics=config.diagnostics if diagnostics is None else diagnostics, stop_below=stop_below)
    rec.algorithm = config.algorithm
    return rec


# single runs --------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    resolved: Resolved
    records: dict = field(default_factory=dict)
    summaries: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)


def eps_report(record: RunRecord, eps_targets) -> dict:
    """Rounds and IFO calls to each eps; unreached targets map to ``None``."""
    return {repr(float(e)): {"rounds": first_hit(record, e, "round"), "ifo": first_hit(record, e, "ifo_total")}
            for e in eps_targets}


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Profile, schedule, then one run per seed; CSV and JSON per seed if ``out_dir``."""
    r = resolve(config)
    result = ExperimentResult(config=config, resolved=r)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for seed in config.seeds:
        rec = execute(config, r, seed)
        extra = {
            "seed": seed,
            "schedule": r.schedule.to_dict(),
            "resolved": r.echo(),
            "profile": asdict(r.profile),
            "eps": eps_report(rec, config.eps_targets),
            "config": config.to_dict(),
        }
        result.records[seed] = rec
        result.summaries[seed] = {**rec.summary(), **extra}
        if out_dir is not None:
            stem_name = f"{config.algorithm}_seed{seed}"
            csv_path = os.path.join(out_dir, stem_name + ".csv")
            json_path = os.path.join(out_dir, stem_name + ".json")
            rec.to_csv(csv_path)
            rec.write_summary(json_path, extra)
            result.paths[seed] = (csv_path, json_path)
    return result


# trade-off sweeps ---------------------------------------------------------------

SWEEP_COLUMNS = ("nu", "I", "b", "eps", "mean_rounds", "stderr_rounds", "mean_ifo", "stderr_ifo", "seeds")


def _mean_stderr(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return None, None
    if v.size == 1:
        return float(v[0]), None
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


@dataclass
class SweepCell:
    nu: Optional[float]
    label: str
    resolved: Optional[dict]
    rounds: dict
    ifo: dict
    error: Optional[str] = None

    def stats(self, eps: float) -> dict:
        key = repr(float(eps))
        rounds = [v for v in self.rounds.get(key, []) if v is not None]
        ifo = [v for v in self.ifo.get(key, []) if v is not None]
        mr, sr = _mean_stderr(rounds)
        mi, si = _mean_stderr(ifo)
        return {"mean_rounds": mr, "stderr_rounds": sr, "mean_ifo": mi, "stderr_ifo": si, "seeds": len(rounds)}


@dataclass
class SweepResult:
    config: ExperimentConfig
    cells: list

    def rows(self):
        for cell in self.cells:
            for eps in self.config.eps_targets:
                st = cell.stats(eps)
                yield {
                    "nu": cell.nu if cell.nu is not None else cell.label,
                    "I": cell.resolved["I"] if cell.resolved else None,
                    "b": cell.resolved["b"] if cell.resolved else None,
                    "eps": eps,
                    **st,
                }

    def to_csv(self, path=None) -> str:
        import io

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in self.rows():
            writer.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                             for c in SWEEP_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def cell(self, label) -> SweepCell:
        for c in self.cells:
            if c.label == label or c.nu == label:
                return c
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(),
                "cells": [{"nu": c.nu, "label": c.label, "resolved": c.resolved, "rounds": c.rounds, "ifo": c.ifo,
                           "error": c.error} for c in self.cells]}


def _run_cell(config, problem, profile, label, nu) -> SweepCell:
    try:
        r = resolve(config, problem, profile)
    except ConfigurationError as exc:
        return SweepCell(nu=nu, label=label, resolved=None, rounds={}, ifo={}, error=str(exc))
    rounds = {repr(float(e)): [] for e in config.eps_targets}
    ifo = {repr(float(e)): [] for e in config.eps_targets}
    for seed in config.seeds:
        # only first hits are needed, so stop once the smallest target is reached
        rec = execute(config, r, seed, diagnostics=False, stop_below=min(config.eps_targets))
        for e in config.eps_targets:
            rounds[repr(float(e))].append(first_hit(rec, e, "round"))
            ifo[repr(float(e))].append(first_hit(rec, e, "ifo_total"))
    return SweepCell(nu=nu, label=label, resolved=r.echo(), rounds=rounds, ifo=ifo)


def sweep_tradeoff(config: ExperimentConfig, nu_grid, extra_cells: Optional[dict] = None,
                   out_dir=None) -> SweepResult:
    """Run ``config`` once per nu (I and b from the trade-off map) and per extra cell.

    ``extra_cells`` maps a label to config overrides, e.g.
    ``{"b1_I1": {"I": 1, "b": 1}}`` for an off-curve comparison. A cell whose
    schedule cannot be resolved is recorded with its error and skipped.
    """
    p = build_problem(config)
    prof = problem_profile(config, p)
    base = replace(config, I=None, b=None)
    cells = [_run_cell(replace(base, nu=float(nu)), p, prof, f"nu={float(nu)!r}", float(nu)) for nu in nu_grid]
    for label, overrides in (extra_cells or {}).items():
        cells.append(_run_cell(replace(base, nu=None, **overrides), p, prof, label, None))
    result = SweepResult(config=config, cells=cells)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.to_csv(os.path.join(out_dir, "sweep_index.csv"))
        with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
            json.dump(result.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    return result


# complexity exponents ------------------------------------------------------------


def fit_complexity(eps, costs) -> tuple:
    """Least-squares slope of ``log cost`` against ``log(1/eps)``; returns ``(slope, r2)``."""
    eps = np.asarray(eps, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if eps.shape != costs.shape:
        raise FitError("eps and costs must have the same length")
    if eps.size < 3:
        raise FitError(f"need at least 3 (eps, cost) points, got {eps.size}")
    if np.any(eps <= 0) or np.any(costs <= 0):
        raise FitError("eps and costs must be positive")
    if np.unique(eps).size < 2:
        raise FitError("eps values must not all coincide")
    fit = linregress(np.log(1.0 / eps), np.log(costs))
    return float(fit.slope), float(fit.rvalue**2)


def horizon_grid(t_min: int, t_max: int, factor: float = math.sqrt(2.0)) -> list:
    """Geometric grid of horizons from ``t_min`` up to ``t_max``."""
    out, i = [], 0
    while True:
        T = int(round(t_min * factor**i))
        if T > t_max:
            return out
        if not out or T > out[-1]:
            out.append(T)
        i += 1


@dataclass
class ComplexityCurve:
    algorithm: str
    eps: tuple
    hits: dict  # seed -> {eps: {"T", "I", "b", "rounds", "ifo"}}

    def costs(self, eps: float, kind: str) -> list:
        return [h[eps][kind] for h in self.hits.values() if eps in h]

    def mean_cost(self, kind: str) -> dict:
        return {e: float(np.mean(self.costs(e, kind))) for e in self.eps if self.costs(e, kind)}

    def fit(self, kind: str) -> tuple:
        means = self.mean_cost(kind)
        es = sorted(means)
        return fit_complexity(es, [means[e] for e in es])

    def reached_all(self) -> bool:
        return all(len(h) == len(self.eps) for h in self.hits.values())

    def to_rows(self):
        for seed, h in self.hits.items():
            for e in self.eps:
                hit = h.get(e)
                yield {"algorithm": self.algorithm, "seed": seed, "eps": e,
                       **({"T": hit["T"], "I": hit["I"], "b": hit["b"], "rounds": hit["rounds"], "ifo": hit["ifo"]}
                          if hit else {"T": None, "I": None, "b": None, "rounds": None, "ifo": None})}


def complexity_curve(config: ExperimentConfig, problem: Optional[ProblemInstance] = None,
                     profile: Optional[SmoothnessProfile] = None) -> ComplexityCurve:
    """Rounds and IFO calls to each eps under the horizon protocol."""
    p = build_problem(config) if problem is None else problem
    prof = problem_profile(config, p) if profile is None else profile
    eps = tuple(sorted((float(e) for e in config.eps_targets), reverse=True))
    grid = horizon_grid(config.horizon_min, config.horizon_max)
    hits = {}
    for seed in config.seeds:
        found = {}
        for T0 in grid:
            r = resolve(config, p, prof, T=T0)
            open_eps = [e for e in eps if e not in found]
            rec = execute(config, r, seed, diagnostics=False, stop_below=min(open_eps))
            for e in eps:
                if e in found:
                    continue
                rounds = first_hit(rec, e, "round")
                if rounds is not None:
                    found[e] = {"T": r.schedule.T, "I": r.schedule.I, "b": r.schedule.b, "rounds": rounds,
                                "ifo": first_hit(rec, e, "ifo_total")}
            if len(found) == len(eps):
                break
        hits[seed] = found
    return ComplexityCurve(algorithm=config.algorithm, eps=eps, hits=hits)


def reference_configs(seeds=(0, 1, 2, 3, 4)) -> dict:
    """STEM and FedAvg settings for the complexity-exponent comparison."""
    common = dict(problem=dict(REFERENCE_PROBLEM), nu=1.0, eps_targets=(1e-2, 3e-3, 1e-3), seeds=tuple(seeds),
                  diagnostics=False, horizon_min=32, horizon_max=1 << 16)
    return {
        STEM: ExperimentConfig(algorithm=STEM, mode=PRACTICAL, kappa=0.4, cbar=3.2, **common),
        FEDAVG: ExperimentConfig(algorithm=FEDAVG, eta_scale=0.3, **common),
    }


OFF_CURVE_CELL = {"b1_I1": {"I": 1, "b": 1}}


def reference_sweep_config(seeds=(0, 1, 2, 3, 4)) -> ExperimentConfig:
    """STEM at T = 4096 on the reference problem with K = 4 workers."""
    problem = dict(REFERENCE_PROBLEM, K=4)
    return ExperimentConfig(problem=problem, algorithm=STEM, mode=PRACTICAL, T=4096, kappa=0.4, cbar=3.2,
                            eps_targets=(1e-2,), seeds=tuple(seeds), diagnostics=False)
