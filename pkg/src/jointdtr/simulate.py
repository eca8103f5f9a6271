"""Observational data generation and target-trial test histories.

One individual's trajectory is generated as a marked point process: latent
effects and a censoring time first, then visits accrue until the next
candidate visit would fall beyond the censoring time.  At each realized
visit the covariate, outcome and (from visit 2 on) treatment are sampled
from the model-core conditionals; the gap to the next candidate visit is
Weibull with the frailty-scaled hazard.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (History, JointParams, PatientPath, RandomEffects,
                    outcome_features, probit_prob, sigma_factor, state_features,
                    treatment_features)
from .rngstreams import substream

MAX_VISITS = 10 ** 6
CENSOR_WINDOW = (3.5, 4.0)


@dataclass
class Dataset:
    paths: list[PatientPath]
    true_params: JointParams
    seed: int
    censor_window: tuple[float, float] = CENSOR_WINDOW

    @property
    def n(self) -> int:
        return len(self.paths)


def draw_random_effects(params: JointParams, rng: np.random.Generator, size: int | None = None):
    factor = sigma_factor(params.Sigma)
    z = rng.standard_normal((size or 1, 3))
    u = z @ factor.T
    if size is None:
        return RandomEffects(*u[0])
    return u


def generate_individual(params: JointParams, rng: np.random.Generator,
                        censor_window: tuple[float, float] = CENSOR_WINDOW,
                        effects: RandomEffects | None = None) -> PatientPath:
    """One trajectory under the observational process.

    The first visit is the baseline: t=0, x=0, outcome drawn from the
    initialization regressors, no treatment.  The candidate visit falling
    beyond the censoring time is dropped; it is only visible to the
    likelihood through the censoring survival term.
    """
    u = effects if effects is not None else draw_random_effects(params, rng)
    zeta = rng.uniform(*censor_window)

    times, ys, xs, trts = [0.0], [], [], [0.0]
    lin1 = outcome_features(0.0, 0.0, 0.0, first=True) @ params.phi_Y + u.u_W
    ys.append(float(rng.random() < probit_prob(lin1)))
    xs.append(0.0)

    frailty = params.lam * np.exp(u.u_T_log)
    while True:
        if len(times) > MAX_VISITS:
            raise RuntimeError("runaway visit process: more than 1e6 visits before censoring")
        x_prev, a_prev = xs[-1], trts[-1]
        b = float(frailty * np.exp(state_features(x_prev, a_prev) @ params.phi_T))
        # S(g) = exp(-b g^alpha)  =>  g = (Exp(1)/b)^(1/alpha)
        gap = (rng.exponential() / b) ** (1.0 / params.alpha)
        t_next = times[-1] + gap
        if t_next > zeta:
            break
        times.append(t_next)
        x = float(rng.normal(state_features(x_prev, a_prev) @ params.phi_X, np.sqrt(params.tau_X2)))
        lin_y = outcome_features(gap, x, a_prev) @ params.phi_Y + u.u_W
        y = float(rng.random() < probit_prob(lin_y))
        lin_a = treatment_features(y, x, a_prev) @ params.phi_A + u.u_A
        a = float(rng.random() < probit_prob(lin_a))
        xs.append(x)
        ys.append(y)
        trts.append(a)

    return PatientPath(np.array(times), np.array(ys), np.array(xs), np.array(trts), censor_time=zeta)


def generate_dataset(n: int, params: JointParams, seed: int,
                     censor_window: tuple[float, float] = CENSOR_WINDOW) -> Dataset:
    """n independent trajectories; individual i's path only depends on
    (seed, i), so it is invariant to n and to generation order."""
    if n < 1:
        raise ValueError("n must be at least 1")
    paths = [generate_individual(params, substream(seed, "indiv", i), censor_window)
             for i in range(n)]
    return Dataset(paths=paths, true_params=params, seed=seed, censor_window=censor_window)


def generate_test_history(params: JointParams, rng: np.random.Generator,
                          t1: float = 1.0) -> tuple[History, RandomEffects]:
    """Target-trial first visit at time t1: draw latent effects, a baseline
    covariate from its marginal law and the outcome from the initialization
    regressors.  Returns the one-visit history and the latent draw."""
    u = draw_random_effects(params, rng)
    x1 = float(rng.normal(state_features(0.0, 0.0) @ params.phi_X, np.sqrt(params.tau_X2)))
    lin = outcome_features(0.0, 0.0, 0.0, first=True) @ params.phi_Y + u.u_W
    y1 = float(rng.random() < probit_prob(lin))
    return History.single_visit(t=t1, x=x1, y=y1), u


# ---------------------------------------------------------------------------
# serialization: one row per visit + JSON sidecar with params and seed

CSV_HEADER = ["id", "j", "t", "y", "x", "a", "zeta", "m"]


def params_to_dict(p: JointParams) -> dict:
    return {
        "phi_Y": p.phi_Y.tolist(), "phi_X": p.phi_X.tolist(), "tau_X2": p.tau_X2,
        "phi_A": p.phi_A.tolist(), "phi_T": p.phi_T.tolist(), "lam": p.lam,
        "alpha": p.alpha, "Sigma": p.Sigma.tolist(), "mu": p.mu, "tau2": p.tau2,
    }


def params_from_dict(d: dict) -> JointParams:
    return JointParams(
        phi_Y=np.array(d["phi_Y"]), phi_X=np.array(d["phi_X"]), tau_X2=float(d["tau_X2"]),
        phi_A=np.array(d["phi_A"]), phi_T=np.array(d["phi_T"]), lam=float(d["lam"]),
        alpha=float(d["alpha"]), Sigma=np.array(d["Sigma"]),
        mu=float(d.get("mu", 0.0)), tau2=float(d.get("tau2", 1.0)),
    )


def save_dataset(ds: Dataset, csv_path: str | Path, sidecar_path: str | Path | None = None) -> None:
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i, p in enumerate(ds.paths):
            m = p.n_visits
            for j in range(m):
                w.writerow([i, j + 1, repr(float(p.visit_times[j])), int(p.outcomes[j]),
                            repr(float(p.covariates[j])), int(p.treatments[j]),
                            repr(float(p.censor_time)), m])
    sidecar = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
    meta = {"n": ds.n, "seed": ds.seed, "censor_window": list(ds.censor_window),
            "params": params_to_dict(ds.true_params)}
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(csv_path: str | Path, sidecar_path: str | Path | None = None) -> Dataset:
    csv_path = Path(csv_path)
    rows: dict[int, list] = {}
    with open(csv_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(int(rec["id"]), []).append(rec)
    paths = []
    for i in sorted(rows):
        recs = sorted(rows[i], key=lambda r: int(r["j"]))
        paths.append(PatientPath(
            visit_times=np.array([float(r["t"]) for r in recs]),
            outcomes=np.array([float(r["y"]) for r in recs]),
            covariates=np.array([float(r["x"]) for r in recs]),
            treatments=np.array([float(r["a"]) for r in recs]),
            censor_time=float(recs[0]["zeta"])))
    sidecar = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
    meta = json.loads(sidecar.read_text())
    return Dataset(paths=paths, true_params=params_from_dict(meta["params"]),
                   seed=int(meta["seed"]), censor_window=tuple(meta["censor_window"]))
