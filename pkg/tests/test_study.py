import csv
import json

import numpy as np
import pytest

from jointdtr.inference import McmcConfig
from jointdtr.model import default_params
from jointdtr.study import (SUMMARY_COLUMNS, StudyConfig, config_hash,
                            run_study, scenario_params)


def tiny_config(**overrides):
    base = dict(
        n_train=20, n_test=2, replications=1, specs=("Y",), scenario="full",
        R_eval=50, R_truth=4000, R_truth_test=2000,
        mcmc=McmcConfig(chains=2, iterations=400, burn_in=200, thin=10, seed=0),
        seed=123, threads=1, persist_draws=True)
    base.update(overrides)
    return StudyConfig(**base)


def test_scenario_covariance_patterns():
    base = default_params()
    full = scenario_params("full").Sigma
    assert np.allclose(full, base.Sigma)
    wa = scenario_params("wa_indep_t").Sigma
    assert wa[0, 1] == wa[0, 2] == 0.0
    assert wa[1, 2] == pytest.approx(0.216)
    wt = scenario_params("wt_indep_a").Sigma
    assert wt[2, 0] == wt[2, 1] == 0.0
    assert wt[0, 1] == pytest.approx(0.216)
    ind = scenario_params("independent").Sigma
    assert np.allclose(ind, np.diag([0.36, 0.36, 0.36]))
    with pytest.raises(ValueError):
        scenario_params("bogus")


def test_smoke_study_emits_schema(tmp_path):
    report = run_study(tiny_config(), out_dir=tmp_path / "out")
    assert not report.failures
    summary = tmp_path / "out" / "metrics" / "summary.csv"
    with open(summary) as fh:
        rows = list(csv.DictReader(fh))
    assert rows and list(rows[0].keys()) == SUMMARY_COLUMNS
    regimes = {r["regime"] for r in rows}
    assert {"optimal", "never_treated", "always_treated"} <= regimes
    profiles = {r["profile"] for r in rows}
    assert {"patient1", "patient2", "test_mean"} <= profiles
    assert (tmp_path / "out" / "data" / "rep_0.csv").exists()
    assert (tmp_path / "out" / "draws" / "rep_0_y.csv").exists()
    assert (tmp_path / "out" / "manifest.json").exists()


def test_study_determinism_and_idempotent_export(tmp_path):
    cfg = tiny_config(n_test=0, persist_draws=False)
    run_study(cfg, out_dir=tmp_path / "a")
    run_study(cfg, out_dir=tmp_path / "b")
    for rel in ("metrics/summary.csv", "metrics/rewards.csv", "manifest.json", "config.json"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_parallel_equals_serial(tmp_path):
    serial = run_study(tiny_config(n_test=0, replications=2, persist_draws=False),
                       out_dir=tmp_path / "s")
    parallel = run_study(tiny_config(n_test=0, replications=2, persist_draws=False, threads=2),
                         out_dir=tmp_path / "p")
    assert (tmp_path / "s" / "metrics" / "summary.csv").read_bytes() == \
        (tmp_path / "p" / "metrics" / "summary.csv").read_bytes()


def test_manifest_round_trips_config(tmp_path):
    cfg = tiny_config(n_test=0, persist_draws=False)
    run_study(cfg, out_dir=tmp_path / "out")
    stored = json.loads((tmp_path / "out" / "config.json").read_text())
    rebuilt = StudyConfig(
        n_train=stored["n_train"], n_test=stored["n_test"],
        replications=stored["replications"], specs=tuple(stored["specs"]),
        scenario=stored["scenario"], future_times=tuple(stored["future_times"]),
        gamma=None if stored["gamma"] is None else tuple(stored["gamma"]),
        R_eval=stored["R_eval"], R_truth=stored["R_truth"],
        R_truth_test=stored["R_truth_test"],
        mcmc=McmcConfig(**stored["mcmc"]), seed=stored["seed"],
        threads=stored["threads"], persist_draws=stored["persist_draws"])
    assert rebuilt.to_dict() == cfg.to_dict()
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(cfg.to_dict())
    assert manifest["seed"] == cfg.seed


def test_full_spec_likelihood_decomposes_over_partial(params):
    """Restricted to shared terms the specs agree exactly: the full joint
    log-posterior equals the outcome-only one plus the treatment and visit
    process terms (data factors, their priors and the wider effect prior)."""
    import math
    from jointdtr.inference import Priors, joint_log_posterior
    from jointdtr.model import (ALL_SPECS, log_density_treatment,
                                log_density_visit_gap, log_survival_visit_gap,
                                build_features_sim, History)
    from jointdtr.simulate import generate_dataset

    ds = generate_dataset(12, params, seed=17)
    n = len(ds.paths)
    full_val = joint_log_posterior(params, np.zeros((n, 3)), ds.paths, ALL_SPECS[0])
    part_val = joint_log_posterior(params, np.zeros((n, 1)), ds.paths, ALL_SPECS[3])

    extra = 0.0
    for path in ds.paths:
        h = History.from_path(path, path.n_visits)
        for j in range(2, path.n_visits + 1):
            gap = path.visit_times[j - 1] - path.visit_times[j - 2]
            extra += log_density_treatment(path.treatments[j - 1],
                                           build_features_sim("A", h, j), 0.0, params.phi_A)
            extra += log_density_visit_gap(gap, build_features_sim("T", h, j), 0.0,
                                           params.phi_T, params.lam, params.alpha)
        cfeat = np.array([path.covariates[-1], path.treatments[-1]])
        extra += log_survival_visit_gap(path.censor_time - path.visit_times[-1],
                                        cfeat, 0.0, params.phi_T, params.lam, params.alpha)
    pri = Priors()
    extra += -0.5 * np.sum(params.phi_A ** 2) / pri.coef_variance
    extra += -0.5 * np.sum(params.phi_T ** 2) / pri.coef_variance
    extra += -0.5 * (math.log(params.lam) ** 2 + math.log(params.alpha) ** 2) / pri.log_scale_variance
    # effect-prior normalizers at u = 0 and the inverse-Wishart prior terms
    s_full = params.Sigma
    s_w = params.sigma_ww
    extra += n * (-0.5 * 3 * math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(s_full)))
    extra -= n * (-0.5 * math.log(2 * math.pi) - 0.5 * math.log(s_w))
    extra += -0.5 * 7 * math.log(np.linalg.det(s_full)) - 0.5 * np.trace(np.linalg.inv(s_full))
    extra -= -0.5 * 3 * math.log(s_w) - 0.5 / s_w
    assert full_val == pytest.approx(part_val + extra, abs=1e-8)
