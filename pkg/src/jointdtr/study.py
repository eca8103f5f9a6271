"""End-to-end simulation experiments: replicate datasets, fit every model
specification, evaluate regime rewards on test profiles, aggregate metrics.

A study is deterministic given its seed: datasets, chains and reward
evaluations all draw from substreams keyed by (seed, replication, spec,
evaluation target), so serial and parallel execution agree bit for bit.
Replication-level fits run in a process pool when ``threads`` > 1; a chain
that diverges flags its (replication, spec) cell and the report carries a
failure manifest instead of aborting the study.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .gcomp import DEFAULT_CONFIG, GcompConfig, posterior_reward, reward_fixed, reward_optimal
from .inference import ChainDivergedError, McmcConfig, Priors, run_mcmc
from .metrics import mc_error_from_rep_stats
from .model import (History, JointParams, ModelSpec, Regime,
                    PATIENT_ONE, PATIENT_TWO, default_params)
from .rngstreams import substream
from .simulate import (Dataset, generate_dataset, generate_test_history,
                       params_to_dict, save_dataset)

SCENARIOS = ("full", "wa_indep_t", "wt_indep_a", "independent")

PROFILES = {"patient1": PATIENT_ONE, "patient2": PATIENT_TWO}

FIXED_REGIMES = {"never_treated": (0, 0), "always_treated": (1, 1)}


def scenario_params(scenario: str, base: JointParams | None = None) -> JointParams:
    """Data-generating parameters with the scenario's independence pattern
    imposed on the effect covariance (coordinate order T, W, A)."""
    params = base if base is not None else default_params()
    sig = params.Sigma.copy()
    if scenario == "full":
        pass
    elif scenario == "wa_indep_t":
        sig[0, 1] = sig[1, 0] = sig[0, 2] = sig[2, 0] = 0.0
    elif scenario == "wt_indep_a":
        sig[2, 0] = sig[0, 2] = sig[2, 1] = sig[1, 2] = 0.0
    elif scenario == "independent":
        sig = np.diag(np.diag(sig))
    else:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    return params.with_sigma(sig)


@dataclass(frozen=True)
class StudyConfig:
    n_train: int = 300
    n_test: int = 100
    replications: int = 20
    specs: tuple[str, ...] = ("Y,A,T", "Y,A", "Y,T", "Y")
    scenario: str = "full"
    future_times: tuple[float, ...] = (2.0, 3.0)
    gamma: tuple[float, ...] | None = None
    R_eval: int = 200
    R_truth: int = 1_000_000
    R_truth_test: int = 100_000
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    seed: int = 0
    threads: int = 1
    persist_draws: bool = True

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        for s in self.specs:
            ModelSpec.parse(s)
        if self.replications < 1 or self.n_train < 1 or self.n_test < 0:
            raise ValueError("replications and n_train must be >= 1, n_test >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mcmc"] = {k: getattr(self.mcmc, k) for k in
                     ("chains", "iterations", "burn_in", "thin", "seed")}
        return d


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class CellResult:
    """One (replication, spec) fit with its posterior reward evaluations."""

    rep: int
    spec: str
    status: str                      # "ok" | "failed"
    error: str = ""
    acceptance: dict = field(default_factory=dict)
    # profile -> per-draw optimal summary
    optimal_mean: dict = field(default_factory=dict)
    optimal_draw_var: dict = field(default_factory=dict)
    optimal_within_var: dict = field(default_factory=dict)
    n_draws: int = 0
    param_ci: dict = field(default_factory=dict)   # name -> [2.5%, 97.5%]
    optimal_first_action: dict = field(default_factory=dict)
    optimal_course_freq: dict = field(default_factory=dict)
    fixed_mean: dict = field(default_factory=dict)       # (profile, regime) -> value
    fixed_within_var: dict = field(default_factory=dict)
    test_means: list = field(default_factory=list)       # per test individual
    test_actions: list = field(default_factory=list)


@dataclass
class StudyReport:
    config: StudyConfig
    params: JointParams
    truth_optimal: dict              # profile -> (value, first_action, course)
    truth_fixed: dict                # (profile, regime) -> value
    truth_benefit: dict              # profile -> benefit
    test_truth: list                 # per test individual: (value, action, benefit)
    cells: list[CellResult]
    summary_rows: list[dict]
    failures: list[dict]


def _derive_seed(seed: int, *keys) -> int:
    return int(substream(seed, *keys).integers(2 ** 63 - 1))


def _eval_rng(cfg: StudyConfig, *keys) -> np.random.Generator:
    return substream(cfg.seed, "study", *keys)


def _truth_evaluations(cfg: StudyConfig, params: JointParams,
                       test_histories: list[History], gc: GcompConfig):
    regime = Regime(future_times=cfg.future_times, gamma=cfg.gamma)
    truth_optimal, truth_fixed, truth_benefit = {}, {}, {}
    for pi, (name, hist) in enumerate(PROFILES.items()):
        plan, est = reward_optimal(hist, regime, params, cfg.R_truth,
                                   _eval_rng(cfg, 0, pi, 0), gc)
        truth_optimal[name] = {"value": est.value, "first_action": plan.first_action,
                               "course": plan.course, "mc_se": est.mc_std_error}
        truth_benefit[name] = plan.arm_values.get(1, float("nan")) - plan.arm_values.get(0, float("nan"))
        for ri, (rname, arms) in enumerate(FIXED_REGIMES.items()):
            freg = replace(regime, fixed=arms)
            fest = reward_fixed(hist, freg, params, cfg.R_truth, _eval_rng(cfg, 0, pi, 1 + ri), gc)
            truth_fixed[(name, rname)] = fest.value
    test_truth = []
    for i, hist in enumerate(test_histories):
        plan, est = reward_optimal(hist, regime, params, cfg.R_truth_test,
                                   _eval_rng(cfg, 1, i, 0), gc)
        test_truth.append({"value": est.value, "first_action": plan.first_action,
                           "benefit": plan.arm_values.get(1, float("nan"))
                           - plan.arm_values.get(0, float("nan"))})
    return truth_optimal, truth_fixed, truth_benefit, test_truth


def _fit_cell(cfg: StudyConfig, params: JointParams, rep: int, spec_label: str,
              test_histories: list[History], draws_path: str | None) -> CellResult:
    spec = ModelSpec.parse(spec_label)
    data = generate_dataset(cfg.n_train, params, _derive_seed(cfg.seed, "data", rep))
    si = cfg.specs.index(spec_label)
    mcmc = replace(cfg.mcmc, seed=_derive_seed(cfg.seed, "chain", rep, si))
    cell = CellResult(rep=rep, spec=spec_label, status="ok")
    gc = DEFAULT_CONFIG
    try:
        draws = run_mcmc(data, spec, Priors(), mcmc)
    except ChainDivergedError as err:
        cell.status = "failed"
        cell.error = str(err)
        return cell
    cell.acceptance = {k: [float(x) for x in v] for k, v in draws.acceptance.items()}
    cell.param_ci = {name: [float(np.quantile(draws.samples[:, j], 0.025)),
                            float(np.quantile(draws.samples[:, j], 0.975))]
                     for j, name in enumerate(draws.names)}
    if draws_path:
        draws.save(draws_path)
    regime = Regime(future_times=cfg.future_times, gamma=cfg.gamma)
    for pi, (name, hist) in enumerate(PROFILES.items()):
        res = posterior_reward(hist, regime, draws, cfg.R_eval,
                               _eval_rng(cfg, 2, rep, si, pi), gc)
        cell.optimal_mean[name] = res.mean
        cell.optimal_draw_var[name] = float(res.values.var(ddof=1)) if len(res.values) > 1 else 0.0
        cell.optimal_within_var[name] = float(np.mean(res.within_se ** 2))  # mean squared MC SE
        cell.n_draws = len(res.values)
        cell.optimal_first_action[name] = int(
            max(res.arm_means, key=lambda a: (res.arm_means[a], -a)))
        cell.optimal_course_freq[name] = {"".join(map(str, k)): v
                                          for k, v in res.course_frequencies.items()}
        for ri, (rname, arms) in enumerate(FIXED_REGIMES.items()):
            freg = replace(regime, fixed=arms)
            fres = posterior_reward(hist, freg, draws, cfg.R_eval,
                                    _eval_rng(cfg, 3, rep, si, pi, ri), gc)
            cell.fixed_mean[(name, rname)] = fres.mean
            cell.fixed_within_var[(name, rname)] = float(np.mean(fres.within_se ** 2))
    for i, hist in enumerate(test_histories):
        res = posterior_reward(hist, regime, draws, cfg.R_eval,
                               _eval_rng(cfg, 4, rep, si, i), gc)
        cell.test_means.append(res.mean)
        cell.test_actions.append(int(max(res.arm_means, key=lambda a: (res.arm_means[a], -a))))
    return cell


def _fit_cell_star(args):
    return _fit_cell(*args)


def run_study(cfg: StudyConfig, out_dir: str | Path | None = None) -> StudyReport:
    """Run the full experiment; optionally persist artifacts as it goes."""
    params = scenario_params(cfg.scenario)
    gc = DEFAULT_CONFIG
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        (out_dir / "data").mkdir(parents=True, exist_ok=True)
        (out_dir / "draws").mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics").mkdir(parents=True, exist_ok=True)

    test_histories = [generate_test_history(params, substream(cfg.seed, "test", i))[0]
                      for i in range(cfg.n_test)]
    truth_optimal, truth_fixed, truth_benefit, test_truth = _truth_evaluations(
        cfg, params, test_histories, gc)

    jobs = []
    for rep in range(cfg.replications):
        if out_dir:
            save_dataset(generate_dataset(cfg.n_train, params, _derive_seed(cfg.seed, "data", rep)),
                         out_dir / "data" / f"rep_{rep}.csv")
        for spec_label in cfg.specs:
            draws_path = None
            if out_dir and cfg.persist_draws:
                tag = spec_label.replace(",", "").lower()
                draws_path = str(out_dir / "draws" / f"rep_{rep}_{tag}.csv")
            jobs.append((cfg, params, rep, spec_label, test_histories, draws_path))

    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            cells = list(pool.map(_fit_cell_star, jobs))
    else:
        cells = [_fit_cell_star(j) for j in jobs]
    cells.sort(key=lambda c: (c.rep, c.spec))

    failures = [{"rep": c.rep, "spec": c.spec, "error": c.error}
                for c in cells if c.status != "ok"]
    summary_rows = _summarize(cfg, cells, truth_optimal, truth_fixed, truth_benefit, test_truth)
    report = StudyReport(config=cfg, params=params, truth_optimal=truth_optimal,
                         truth_fixed=truth_fixed, truth_benefit=truth_benefit,
                         test_truth=test_truth, cells=cells,
                         summary_rows=summary_rows, failures=failures)
    if out_dir:
        export_report(report, out_dir)
    return report


def _summarize(cfg, cells, truth_optimal, truth_fixed, truth_benefit, test_truth):
    rows = []
    for spec_label in cfg.specs:
        ok = [c for c in cells if c.spec == spec_label and c.status == "ok"]
        if not ok:
            continue
        for name in PROFILES:
            vals = np.array([c.optimal_mean[name] for c in ok])
            drawv = np.array([c.optimal_draw_var[name] for c in ok])
            withv = np.array([c.optimal_within_var[name] for c in ok])
            acts = np.array([c.optimal_first_action[name] for c in ok])
            truth = truth_optimal[name]
            bias = vals - truth["value"]
            dec = mc_error_from_rep_stats(vals, drawv, withv, max(ok[0].n_draws, 2), cfg.R_eval)
            se = float(bias.std(ddof=1) / np.sqrt(len(bias))) if len(bias) > 1 else 0.0
            row = {
                "spec": spec_label, "n": cfg.n_train, "profile": name, "regime": "optimal",
                "true_value": truth["value"], "true_first_action": truth["first_action"],
                "benefit": truth_benefit[name],
                "bias": float(bias.mean()), "bias_se": se,
                "bias_ci_lo": float(bias.mean() - 1.96 * se),
                "bias_ci_hi": float(bias.mean() + 1.96 * se),
                "agreement_rate": float((acts == truth["first_action"]).mean()),
                "n_reps_ok": len(ok),
                "mc_term_between_rep": dec.term_between_replication,
                "mc_term_between_draw": dec.term_between_draw,
                "mc_term_within_rollout": dec.term_within_rollout,
            }
            rows.append(row)
            for rname in FIXED_REGIMES:
                fvals = np.array([c.fixed_mean[(name, rname)] for c in ok])
                fbias = fvals - truth_fixed[(name, rname)]
                fse = float(fbias.std(ddof=1) / np.sqrt(len(fbias))) if len(fbias) > 1 else 0.0
                rows.append({
                    "spec": spec_label, "n": cfg.n_train, "profile": name, "regime": rname,
                    "true_value": truth_fixed[(name, rname)], "true_first_action": "",
                    "benefit": "", "bias": float(fbias.mean()), "bias_se": fse,
                    "bias_ci_lo": float(fbias.mean() - 1.96 * fse),
                    "bias_ci_hi": float(fbias.mean() + 1.96 * fse),
                    "agreement_rate": "", "n_reps_ok": len(ok),
                    "mc_term_between_rep": "", "mc_term_between_draw": "",
                    "mc_term_within_rollout": "",
                })
        if cfg.n_test:
            biases, ars = [], []
            for i, tt in enumerate(test_truth):
                vals = np.array([c.test_means[i] for c in ok])
                acts = np.array([c.test_actions[i] for c in ok])
                biases.append(vals.mean() - tt["value"])
                ars.append((acts == tt["first_action"]).mean())
            rows.append({
                "spec": spec_label, "n": cfg.n_train, "profile": "test_mean", "regime": "optimal",
                "true_value": float(np.mean([t["value"] for t in test_truth])),
                "true_first_action": "",
                "benefit": float(np.mean([t["benefit"] for t in test_truth])),
                "bias": float(np.mean(np.abs(biases))), "bias_se": "",
                "bias_ci_lo": "", "bias_ci_hi": "",
                "agreement_rate": float(np.mean(ars)), "n_reps_ok": len(ok),
                "mc_term_between_rep": "", "mc_term_between_draw": "",
                "mc_term_within_rollout": "",
            })
    return rows


SUMMARY_COLUMNS = ["spec", "n", "profile", "regime", "true_value", "true_first_action",
                   "benefit", "bias", "bias_se", "bias_ci_lo", "bias_ci_hi",
                   "agreement_rate", "n_reps_ok", "mc_term_between_rep",
                   "mc_term_between_draw", "mc_term_within_rollout"]


def export_report(report: StudyReport, directory: str | Path) -> None:
    """Write metric CSVs and the manifest (datasets and draws are written
    during the run).  Exports are idempotent byte for byte."""
    import csv as _csv

    directory = Path(directory)
    (directory / "metrics").mkdir(parents=True, exist_ok=True)
    cfg_dict = report.config.to_dict()
    (directory / "config.json").write_text(json.dumps(cfg_dict, indent=2, sort_keys=True) + "\n")

    with open(directory / "metrics" / "summary.csv", "w", newline="") as fh:
        w = _csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for row in report.summary_rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in row.items()})

    with open(directory / "metrics" / "rewards.csv", "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["rep", "spec", "profile", "regime", "posterior_mean", "first_action"])
        for c in report.cells:
            if c.status != "ok":
                continue
            for name in PROFILES:
                w.writerow([c.rep, c.spec, name, "optimal",
                            repr(float(c.optimal_mean[name])), c.optimal_first_action[name]])
                for rname in FIXED_REGIMES:
                    w.writerow([c.rep, c.spec, name, rname,
                                repr(float(c.fixed_mean[(name, rname)])), ""])

    import numpy as _np
    import scipy as _scipy

    manifest = {
        "config_hash": config_hash(cfg_dict),
        "seed": report.config.seed,
        "versions": {"jointdtr": __version__, "numpy": _np.__version__,
                     "scipy": _scipy.__version__},
        "params": params_to_dict(report.params),
        "truth_optimal": {k: {kk: (list(vv) if isinstance(vv, tuple) else vv)
                              for kk, vv in v.items()}
                          for k, v in report.truth_optimal.items()},
        "failures": report.failures,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
