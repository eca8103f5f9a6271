import csv
import json

import numpy as np
import pytest

from jointdtr.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "jointdtr 0.1.0" in capsys.readouterr().out


def test_simulate_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    code1, out1, _ = run_cli(capsys, "simulate", "--n", "5", "--seed", "7", "--out", str(a))
    code2, out2, _ = run_cli(capsys, "simulate", "--n", "5", "--seed", "7", "--out", str(b))
    assert code1 == code2 == 0
    assert "master seed: 7" in out1
    assert (a / "dataset.csv").read_bytes() == (b / "dataset.csv").read_bytes()
    assert (a / "dataset.json").read_bytes() == (b / "dataset.json").read_bytes()
    run_json = json.loads((a / "run.json").read_text())
    assert run_json["seed"] == 7 and "config_hash" in run_json


def test_config_file_with_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"n": 3, "bogus_key": 1}))
    code, _, err = run_cli(capsys, "simulate", "--config", str(cfg))
    assert code == 1
    assert "bogus_key" in err


def test_config_file_type_checked(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"n": "not a number"}))
    code, _, err = run_cli(capsys, "simulate", "--config", str(cfg))
    assert code == 1
    assert "n" in err


def test_flags_override_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 3, "seed": 1}))
    code, out, _ = run_cli(capsys, "simulate", "--config", str(cfg), "--seed", "9",
                           "--out", str(tmp_path / "o"))
    assert code == 0
    assert "master seed: 9" in out


def test_missing_required_input_is_validation_error(capsys):
    code, _, err = run_cli(capsys, "fit")
    assert code == 1
    assert "fit requires --data" in err


def test_nonexistent_data_is_runtime_failure(tmp_path, capsys):
    code, _, err = run_cli(capsys, "fit", "--data", str(tmp_path / "nope.csv"), "--seed", "1")
    assert code == 2


def test_fit_and_posterior_reward_flow(tmp_path, capsys):
    sim = tmp_path / "sim"
    run_cli(capsys, "simulate", "--n", "25", "--seed", "3", "--out", str(sim))
    fit = tmp_path / "fit"
    code, out, _ = run_cli(capsys, "fit", "--data", str(sim / "dataset.csv"),
                           "--spec", "Y", "--seed", "4", "--out", str(fit),
                           "--chains", "2", "--iterations", "400", "--burn-in", "200",
                           "--thin", "4")
    assert code == 0, out
    assert (fit / "draws.csv").exists()
    diag = json.loads((fit / "diagnostics.json").read_text())
    assert "rhat" in diag["diagnostics"]

    code, out, _ = run_cli(capsys, "reward", "--profile", "patient1",
                           "--draws", str(fit / "draws.csv"), "--treatments", "0,0",
                           "--rollouts", "200", "--seed", "5", "--out", str(tmp_path / "rw"))
    assert code == 0
    assert "posterior mean reward" in out
    rep = json.loads((tmp_path / "rw" / "reward.json").read_text())
    assert "mean_reward" in rep["result"]

    code, out, _ = run_cli(capsys, "optimize", "--profile", "patient1",
                           "--draws", str(fit / "draws.csv"),
                           "--rollouts", "200", "--seed", "5", "--out", str(tmp_path / "op"))
    assert code == 0
    assert "most recommended course" in out


def test_optimize_truth_prints_action_and_value(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "optimize", "--profile", "patient1", "--truth",
                           "--rollouts", "40000", "--seed", "11",
                           "--out", str(tmp_path / "o1"))
    assert code == 0
    assert "first action: 1" in out
    value = json.loads((tmp_path / "o1" / "optimize.json").read_text())["result"]["value"]
    assert value == pytest.approx(1.132, abs=0.02)

    code2, out2, _ = run_cli(capsys, "optimize", "--profile", "patient1", "--truth",
                             "--rollouts", "40000", "--seed", "11",
                             "--out", str(tmp_path / "o2"))
    assert (tmp_path / "o1" / "optimize.json").read_bytes() == \
        (tmp_path / "o2" / "optimize.json").read_bytes()


def test_reward_truth_fixed(capsys):
    code, out, _ = run_cli(capsys, "reward", "--profile", "patient2", "--truth",
                           "--treatments", "0,0", "--rollouts", "20000", "--seed", "2")
    assert code == 0
    assert "value:" in out


def test_unknown_profile_rejected(capsys):
    code, _, err = run_cli(capsys, "reward", "--profile", "nobody", "--truth", "--seed", "1")
    assert code == 1
    assert "unknown profile" in err


def test_mc_error_fixture(tmp_path, capsys):
    rng = np.random.default_rng(0)
    S, B, R = 10, 10, 10
    path = tmp_path / "nested.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "b", "r", "value"])
        for s in range(S):
            rs = rng.normal(0, 1.0)
            for b in range(B):
                rb = rng.normal(0, 0.5)
                for r in range(R):
                    w.writerow([s, b, r, repr(rs + rb + rng.normal(0, 0.2))])
    code, out, _ = run_cli(capsys, "mc-error", "--input", str(path),
                           "--out", str(tmp_path / "mc"))
    assert code == 0
    assert "between-replication component" in out
    payload = json.loads((tmp_path / "mc" / "mc_error.json").read_text())
    assert payload["S"] == S
    assert payload["components"]["within_rollout"] == pytest.approx(0.04, rel=0.5)


def test_mc_error_rejects_ragged_input(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "b", "r", "value"])
        w.writerow([0, 0, 0, 1.0])
        w.writerow([0, 0, 1, 1.0])
        w.writerow([1, 0, 0, 1.0])
    code, _, err = run_cli(capsys, "mc-error", "--input", str(path))
    assert code == 1
    assert "not rectangular" in err


def test_study_smoke_via_cli(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "study", "--n-train", "15", "--n-test", "0",
                           "--replications", "1", "--specs", "Y", "--chains", "2",
                           "--iterations", "300", "--burn-in", "150", "--thin", "10",
                           "--rollouts", "40", "--r-truth", "2000", "--seed", "6",
                           "--out", str(tmp_path / "st"))
    assert code == 0, out
    assert (tmp_path / "st" / "metrics" / "summary.csv").exists()
    assert "summary.csv" in out


def test_bad_spec_and_regime_are_validation_errors(tmp_path, capsys):
    sim = tmp_path / "s"
    run_cli(capsys, "simulate", "--n", "3", "--seed", "1", "--out", str(sim))
    code, _, err = run_cli(capsys, "fit", "--data", str(sim / "dataset.csv"),
                           "--spec", "Q,Z", "--seed", "1")
    assert code == 1 and "model spec" in err
    code, _, err = run_cli(capsys, "reward", "--profile", "patient1", "--truth",
                           "--treatments", "0,0,0", "--seed", "1")
    assert code == 1 and "fixed regime" in err
