"""Command-line front end.

Subcommands: simulate, fit, reward, optimize, study, mc-error.  Options can
come from a JSON config file (--config) with the same keys as the flags;
explicit flags override file values, unknown config keys are rejected.  All
randomness flows from a single master seed that is printed (and generated
if not supplied), and every output embeds the config hash and seed, so any
run can be reproduced exactly.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import secrets
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .diagnostics import diagnostics
from .gcomp import posterior_reward, reward_fixed, reward_optimal
from .inference import McmcConfig, PosteriorDraws, Priors, run_mcmc
from .metrics import NestedSamples, mc_error_three_way
from .model import History, ModelSpec, Regime, default_params
from .rngstreams import substream
from .simulate import generate_dataset, load_dataset, params_from_dict, save_dataset
from .study import PROFILES, StudyConfig, config_hash, run_study


class CliError(Exception):
    """Validation problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


# option schema per subcommand: name -> (type, default, help)
SCHEMAS: dict[str, dict[str, tuple]] = {
    "simulate": {
        "n": (int, 100, "number of individuals"),
        "seed": (int, None, "master seed (generated and printed if omitted)"),
        "out": (str, "simulated", "output directory"),
        "censor_lo": (float, 3.5, "censoring window lower bound"),
        "censor_hi": (float, 4.0, "censoring window upper bound"),
        "params_json": (str, None, "JSON file with data-generating parameters"),
    },
    "fit": {
        "data": (str, None, "dataset CSV (with JSON sidecar)"),
        "spec": (str, "Y,A,T", "model specification, e.g. Y,A,T or Y"),
        "seed": (int, None, "master seed"),
        "out": (str, "fit", "output directory"),
        "chains": (int, 4, "number of chains"),
        "iterations": (int, 20000, "sweeps per chain"),
        "burn_in": (int, 10000, "burn-in sweeps"),
        "thin": (int, 10, "thinning interval"),
    },
    "reward": {
        "profile": (str, None, "patient1 or patient2"),
        "history_json": (str, None, "JSON file with a custom history"),
        "truth": (bool, False, "evaluate at the data-generating parameters"),
        "params_json": (str, None, "JSON parameters for --truth"),
        "draws": (str, None, "posterior draws CSV (alternative to --truth)"),
        "treatments": (str, "0,0", "fixed treatment sequence"),
        "times": (str, "2,3", "future visit times"),
        "gamma": (str, None, "outcome weights (default all 1)"),
        "rollouts": (int, 100000, "Monte Carlo rollouts"),
        "seed": (int, None, "master seed"),
        "out": (str, None, "output directory (optional)"),
    },
    "optimize": {
        "profile": (str, None, "patient1 or patient2"),
        "history_json": (str, None, "JSON file with a custom history"),
        "truth": (bool, False, "evaluate at the data-generating parameters"),
        "params_json": (str, None, "JSON parameters for --truth"),
        "draws": (str, None, "posterior draws CSV"),
        "times": (str, "2,3", "future visit times"),
        "gamma": (str, None, "outcome weights (default all 1)"),
        "cap_total": (int, None, "feasible-set cap on total treatments"),
        "rollouts": (int, 200000, "Monte Carlo rollouts"),
        "seed": (int, None, "master seed"),
        "out": (str, None, "output directory (optional)"),
    },
    "study": {
        "n_train": (int, 300, "training-set size"),
        "n_test": (int, 100, "test-set size"),
        "replications": (int, 20, "simulation replications"),
        "specs": (str, "Y,A,T;Y,A;Y,T;Y", "semicolon-separated model specs"),
        "scenario": (str, "full", "effect-correlation scenario"),
        "chains": (int, 4, "MCMC chains"),
        "iterations": (int, 20000, "sweeps per chain"),
        "burn_in": (int, 10000, "burn-in sweeps"),
        "thin": (int, 10, "thinning interval"),
        "rollouts": (int, 200, "rollouts per posterior draw"),
        "r_truth": (int, 1000000, "rollouts for truth evaluation"),
        "seed": (int, None, "master seed"),
        "out": (str, "study_out", "output directory"),
        "persist_draws": (bool, True, "write per-fit draw CSVs"),
    },
    "mc-error": {
        "input": (str, None, "CSV with columns s,b,r,value"),
        "out": (str, None, "output directory (optional)"),
        "seed": (int, 0, "recorded in outputs; the decomposition is deterministic"),
    },
}


def _load_config_file(path: str, schema: dict) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise CliError(f"cannot read config {path}: {err}")
    if not isinstance(raw, dict):
        raise CliError(f"config {path}: expected a JSON object")
    out = {}
    for key, val in raw.items():
        if key not in schema:
            raise CliError(f"config {path}: unknown key {key!r} "
                           f"(allowed: {', '.join(sorted(schema))})")
        typ = schema[key][0]
        if typ is bool:
            if not isinstance(val, bool):
                raise CliError(f"config {path}: field {key!r} must be a boolean")
        elif val is not None:
            try:
                val = typ(val)
            except (TypeError, ValueError):
                raise CliError(f"config {path}: field {key!r} must be {typ.__name__}")
        out[key] = val
    return out


def _resolve(args: argparse.Namespace, schema: dict) -> dict:
    """Config-file values overridden by explicit command-line flags."""
    opts = {k: spec[1] for k, spec in schema.items()}
    if getattr(args, "config", None):
        opts.update(_load_config_file(args.config, schema))
    for key in schema:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            opts[key] = val
    return opts


def _master_seed(opts: dict) -> int:
    if opts.get("seed") is None:
        opts["seed"] = secrets.randbelow(2 ** 31)
    seed = int(opts["seed"])
    print(f"master seed: {seed}")
    return seed


def _stamp(opts: dict) -> dict:
    # the output destination is not part of the run's identity
    clean = {k: v for k, v in opts.items() if v is not None and k != "out"}
    return {"config_hash": config_hash(clean), "seed": opts.get("seed"), "config": clean}


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise CliError(f"cannot parse number list {text!r}")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _history_from(opts: dict) -> History:
    if opts.get("profile"):
        try:
            return PROFILES[opts["profile"]]
        except KeyError:
            raise CliError(f"unknown profile {opts['profile']!r}; "
                           f"choose from {', '.join(PROFILES)}")
    if opts.get("history_json"):
        raw = json.loads(Path(opts["history_json"]).read_text())
        try:
            return History(np.array(raw["visit_times"]), np.array(raw["outcomes"]),
                           np.array(raw["covariates"]), np.array(raw["treatments"]))
        except (KeyError, ValueError) as err:
            raise CliError(f"bad history file: {err}")
    raise CliError("need --profile or --history-json")


def _params_from(opts: dict):
    if opts.get("params_json"):
        return params_from_dict(json.loads(Path(opts["params_json"]).read_text()))
    return default_params()


def cmd_simulate(opts: dict) -> int:
    seed = _master_seed(opts)
    params = _params_from(opts)
    ds = generate_dataset(int(opts["n"]), params, seed,
                          censor_window=(opts["censor_lo"], opts["censor_hi"]))
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "dataset.csv")
    _write_json(out / "run.json", _stamp(opts))
    print(f"wrote {out / 'dataset.csv'} ({ds.n} individuals, "
          f"{sum(p.n_visits for p in ds.paths)} visits)")
    return 0


def cmd_fit(opts: dict) -> int:
    if not opts.get("data"):
        raise CliError("fit requires --data")
    seed = _master_seed(opts)
    ds = load_dataset(opts["data"])
    try:
        spec = ModelSpec.parse(opts["spec"])
    except ValueError as err:
        raise CliError(str(err))
    cfg = McmcConfig(chains=int(opts["chains"]), iterations=int(opts["iterations"]),
                     burn_in=int(opts["burn_in"]), thin=int(opts["thin"]), seed=seed)
    draws = run_mcmc(ds, spec, Priors(), cfg)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    draws.save(out / "draws.csv")
    diag = diagnostics(draws)
    _write_json(out / "diagnostics.json", {**_stamp(opts), "diagnostics": diag})
    print(f"wrote {out / 'draws.csv'} ({len(draws.samples)} draws, spec {spec.label})")
    worst = max(diag.get("rhat", {"": float('nan')}).values()) if "rhat" in diag else float("nan")
    print(f"max split R-hat: {worst:.4f}")
    return 0


def _reward_common(opts: dict, optimal: bool) -> int:
    seed = _master_seed(opts)
    hist = _history_from(opts)
    times = _parse_floats(opts["times"])
    gamma = _parse_floats(opts["gamma"]) if opts.get("gamma") else None
    from .model import FeasibleSet
    feas = FeasibleSet(cap_total=opts.get("cap_total"))
    R = int(opts["rollouts"])
    rng = substream(seed, "rollout", 0)
    payload = _stamp(opts)
    try:
        if optimal:
            regime = Regime(future_times=times, gamma=gamma, feasible=feas)
        else:
            fixed = tuple(int(v) for v in _parse_floats(opts["treatments"]))
            regime = Regime(future_times=times, fixed=fixed, gamma=gamma, feasible=feas)
    except ValueError as err:
        raise CliError(str(err))
    if opts.get("truth"):
        params = _params_from(opts)
        if optimal:
            plan, est = reward_optimal(hist, regime, params, R, rng)
            payload["result"] = {"first_action": plan.first_action,
                                 "course": list(plan.course),
                                 "arm_values": {str(k): v for k, v in plan.arm_values.items()},
                                 "value": est.value, "mc_se": est.mc_std_error, "R": R}
            print(f"first action: {plan.first_action}")
            print(f"value: {est.value:.4f} (mc se {est.mc_std_error:.4f})")
        else:
            est = reward_fixed(hist, regime, params, R, rng)
            payload["result"] = {"value": est.value, "mc_se": est.mc_std_error, "R": R,
                                 "treatments": list(regime.fixed)}
            print(f"value: {est.value:.4f} (mc se {est.mc_std_error:.4f})")
    elif opts.get("draws"):
        draws = PosteriorDraws.load(opts["draws"])
        res = posterior_reward(hist, regime, draws, R, rng)
        payload["result"] = res.to_report()
        print(f"posterior mean reward: {res.mean:.4f} over {len(res.values)} draws")
        if optimal and res.course_frequencies:
            top = max(res.course_frequencies.items(), key=lambda kv: kv[1])
            print(f"most recommended course: {''.join(map(str, top[0]))} ({top[1]:.1%})")
    else:
        raise CliError("need --truth or --draws")
    if opts.get("out"):
        name = "optimize.json" if optimal else "reward.json"
        _write_json(Path(opts["out"]) / name, payload)
        print(f"wrote {Path(opts['out']) / name}")
    return 0


def cmd_reward(opts: dict) -> int:
    return _reward_common(opts, optimal=False)


def cmd_optimize(opts: dict) -> int:
    return _reward_common(opts, optimal=True)


def cmd_study(opts: dict, threads: int) -> int:
    seed = _master_seed(opts)
    mcmc = McmcConfig(chains=int(opts["chains"]), iterations=int(opts["iterations"]),
                      burn_in=int(opts["burn_in"]), thin=int(opts["thin"]))
    cfg = StudyConfig(
        n_train=int(opts["n_train"]), n_test=int(opts["n_test"]),
        replications=int(opts["replications"]),
        specs=tuple(s.strip() for s in str(opts["specs"]).split(";") if s.strip()),
        scenario=opts["scenario"], R_eval=int(opts["rollouts"]),
        R_truth=int(opts["r_truth"]), mcmc=mcmc, seed=seed, threads=threads,
        persist_draws=bool(opts["persist_draws"]))
    out = Path(opts["out"])
    report = run_study(cfg, out_dir=out)
    _write_json(out / "run.json", _stamp(opts))
    print(f"wrote {out}/metrics/summary.csv ({len(report.summary_rows)} rows, "
          f"{len(report.failures)} failed cells)")
    return 0


def cmd_mc_error(opts: dict) -> int:
    if not opts.get("input"):
        raise CliError("mc-error requires --input")
    rows = {}
    with open(opts["input"], newline="") as fh:
        rd = csv.DictReader(fh)
        missing = {"s", "b", "r", "value"} - set(rd.fieldnames or [])
        if missing:
            raise CliError(f"{opts['input']}: missing columns {sorted(missing)}")
        for rec in rd:
            rows[(int(rec["s"]), int(rec["b"]), int(rec["r"]))] = float(rec["value"])
    if not rows:
        raise CliError("no rows in input")
    S = 1 + max(k[0] for k in rows)
    B = 1 + max(k[1] for k in rows)
    R = 1 + max(k[2] for k in rows)
    if len(rows) != S * B * R:
        raise CliError(f"input is not rectangular: expected {S}x{B}x{R} rows, got {len(rows)}")
    values = np.empty((S, B, R))
    for (s, b, r), v in rows.items():
        values[s, b, r] = v
    dec = mc_error_three_way(NestedSamples(values))
    print(f"between-replication component: {dec.var_between_replication:.6g} "
          f"(term {dec.term_between_replication:.6g})")
    print(f"between-draw component:        {dec.var_between_draw:.6g} "
          f"(term {dec.term_between_draw:.6g})")
    print(f"within-rollout component:      {dec.var_within_rollout:.6g} "
          f"(term {dec.term_within_rollout:.6g})")
    if opts.get("out"):
        _write_json(Path(opts["out"]) / "mc_error.json", {
            **_stamp(opts),
            "components": {"between_replication": dec.var_between_replication,
                           "between_draw": dec.var_between_draw,
                           "within_rollout": dec.var_within_rollout},
            "terms": {"between_replication": dec.term_between_replication,
                      "between_draw": dec.term_between_draw,
                      "within_rollout": dec.term_within_rollout},
            "S": S, "B": B, "R": R})
        print(f"wrote {Path(opts['out']) / 'mc_error.json'}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="jointdtr", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version",
                        version=f"jointdtr {__version__} (numpy {np.__version__}, "
                                f"scipy {scipy.__version__})")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for study replications")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="JSON config file; flags override its values")
        for key, (typ, default, helptext) in schema.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, action="store_const", const=True, default=None,
                               dest=key, help=helptext)
                p.add_argument("--no-" + key.replace("_", "-"), action="store_const",
                               const=False, default=None, dest=key)
            else:
                p.add_argument(flag, type=typ, default=None, dest=key, help=helptext)
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "reward": cmd_reward,
    "optimize": cmd_optimize,
    "mc-error": cmd_mc_error,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        opts = _resolve(args, SCHEMAS[args.command])
        if args.command == "study":
            return cmd_study(opts, threads=args.threads)
        return COMMANDS[args.command](opts)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
