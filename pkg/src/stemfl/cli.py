"""Command-line entry point: ``run``, ``sweep``, ``fit`` and ``schedule-dump``.

Configuration errors exit with status 2 and a JSON object on stderr naming
the offending field.
"""

import argparse
import csv
import json
import os
import sys

from .engine import _json_default
from .errors import ConfigurationError, EstimationError, FitError
from .experiment import ExperimentConfig, complexity_curve, fit_complexity, resolve, run_experiment, sweep_tradeoff
from .schedules import write_schedule_csv

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _add_config_flags(sp, nu_list=False):
    sp.add_argument("--config", help="JSON experiment config")
    sp.add_argument("--seed", type=int, help="single seed (replaces the config's seed list)")
    sp.add_argument("--algo", choices=("stem", "fedavg", "minibatch-sgd"))
    if nu_list:
        sp.add_argument("--nu", type=_float_list, default=(0.0, 0.25, 0.5, 0.75, 1.0), help="comma-separated nu grid")
    else:
        sp.add_argument("--nu", type=float)
    sp.add_argument("--T", type=int)
    sp.add_argument("--K", type=int, help="number of workers (overrides the problem's K)")
    sp.add_argument("--b", type=int)
    sp.add_argument("--I", type=int)
    sp.add_argument("--mode", choices=("theoretical", "practical"))
    sp.add_argument("--eps", type=_float_list, help="comma-separated eps targets")
    sp.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stemfl", description="Federated STEM / FedAvg simulator")
    sub = parser.add_subparsers(dest="verb", required=True)
    _add_config_flags(sub.add_parser("run", help="run one configuration for each seed"))
    _add_config_flags(sub.add_parser("sweep", help="sweep nu along the (I, b) trade-off curve"), nu_list=True)
    fit = sub.add_parser("fit", help="fit complexity exponents")
    _add_config_flags(fit)
    fit.add_argument("--input", help="CSV with an 'eps' column and a cost column")
    fit.add_argument("--cost", default="mean_rounds", help="cost column in --input (default mean_rounds)")
    dump = sub.add_parser("schedule-dump", help="write t, w_t, eta_t, a_t as CSV")
    _add_config_flags(dump)
    dump.add_argument("--t-max", type=int, dest="t_max", help="last t to dump (default T)")
    return parser


def load_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}", field="config") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}", field="config") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a JSON object", field="<root>")
    raw = dict(raw)
    if args.K is not None:
        if not isinstance(raw.get("problem"), dict):
            raise ConfigurationError("--K needs a problem in the config", field="problem")
        raw["problem"] = {**raw["problem"], "K": args.K}
    flags = {"algorithm": args.algo, "T": args.T, "b": args.b, "I": args.I, "mode": args.mode}
    if not isinstance(args.nu, tuple):
        flags["nu"] = args.nu
    if args.eps is not None:
        flags["eps_targets"] = list(args.eps)
    if args.seed is not None:
        flags["seeds"] = [args.seed]
    raw.update({k: v for k, v in flags.items() if v is not None})
    return ExperimentConfig.from_dict(raw)


def _emit(payload, out=None):
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    print(text, file=out or sys.stdout)


def cmd_run(args) -> int:
    cfg = load_config(args)
    result = run_experiment(cfg, args.out)
    _emit({"summaries": {str(s): v for s, v in result.summaries.items()},
           "files": {str(s): list(v) for s, v in result.paths.items()}})
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    result = sweep_tradeoff(cfg, args.nu, out_dir=args.out)
    sys.stdout.write(result.to_csv())
    return 0


def _read_cost_csv(path, column):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigurationError(f"cannot read input: {exc}", field="input") from exc
    if not rows or "eps" not in rows[0] or column not in rows[0]:
        raise ConfigurationError(f"input needs columns 'eps' and {column!r}", field="input")
    eps, cost = [], []
    for row in rows:
        if row[column] not in ("", None):
            eps.append(float(row["eps"]))
            cost.append(float(row[column]))
    return eps, cost


def cmd_fit(args) -> int:
    if args.input:
        eps, cost = _read_cost_csv(args.input, args.cost)
        slope, r2 = fit_complexity(eps, cost)
        _emit({"exponent": slope, "r2": r2, "points": len(eps), "cost": args.cost})
        return 0
    cfg = load_config(args)
    curve = complexity_curve(cfg)
    payload = {"algorithm": cfg.algorithm, "mean_rounds": curve.mean_cost("rounds"),
               "mean_ifo": curve.mean_cost("ifo"), "hits": {str(k): v for k, v in curve.hits.items()}}
    for kind in ("rounds", "ifo"):
        try:
            slope, r2 = curve.fit(kind)
            payload[f"{kind}_exponent"], payload[f"{kind}_r2"] = slope, r2
        except FitError as exc:
            payload[f"{kind}_exponent"] = None
            payload[f"{kind}_error"] = str(exc)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"complexity_{cfg.algorithm}.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        rounds, ifo = payload["mean_rounds"], payload["mean_ifo"]
        with open(os.path.join(args.out, f"complexity_{cfg.algorithm}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("eps", "mean_rounds", "mean_ifo"))
            for e in curve.eps:
                writer.writerow((e, rounds.get(e, ""), ifo.get(e, "")))
    _emit(payload)
    return 0


def cmd_schedule_dump(args) -> int:
    cfg = load_config(args)
    r = resolve(cfg)
    t_max = r.schedule.T if args.t_max is None else args.t_max
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "schedule.csv")
        write_schedule_csv(r.schedule, path, t_max)
        _emit({"schedule": r.schedule.to_dict(), "file": path})
    else:
        write_schedule_csv(r.schedule, sys.stdout, t_max)
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "fit": cmd_fit, "schedule-dump": cmd_schedule_dump}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except ConfigurationError as exc:
        _emit({"error": type(exc).__name__, "field": exc.field, "message": str(exc)}, sys.stderr)
        return EXIT_CONFIG
    except FitError as exc:
        _emit({"error": type(exc).__name__, "field": "input", "message": str(exc)}, sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        _emit({"error": type(exc).__name__, "field": None, "message": str(exc)}, sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
