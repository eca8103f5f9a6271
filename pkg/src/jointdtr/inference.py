"""Posterior sampling of the joint model by Metropolis-within-Gibbs.

The latent effect triples are sampled explicitly (data augmentation), which
realizes the joint-posterior integral over individuals' random effects.  The
likelihood of one individual multiplies, per the modeled processes:

* outcome and covariate densities at every visit,
* treatment densities from visit 2 on,
* visit-gap densities for gaps 2..m plus the survival of the censored gap
  beyond the last visit,
* the multivariate normal prior of the individual's effect coordinates.

Partial specifications drop both a process's likelihood factor and the
matching effect coordinate, shrinking the effect covariance accordingly.

Blocks: one adaptive random-walk per coefficient vector, random walks on the
logs of the scale parameters (with Jacobian where the prior is on the
natural scale), a vectorized per-individual random walk for the effects and
a conjugate inverse-Wishart draw for their covariance.  Proposal scales
adapt toward target acceptance rates during burn-in only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr
from scipy.stats import invwishart

from .model import (ALL_SPECS, EFFECT_ORDER, JointParams, ModelSpec,
                    PatientPath, outcome_features, state_features,
                    treatment_features)
from .rngstreams import substream


class ChainDivergedError(RuntimeError):
    """Raised when a chain's log-posterior becomes non-finite."""

    def __init__(self, chain: int, sweep: int):
        super().__init__(f"chain {chain} diverged (non-finite log posterior) at sweep {sweep}")
        self.chain = chain
        self.sweep = sweep


@dataclass(frozen=True)
class Priors:
    coef_variance: float = 25.0
    tau_shape: float = 0.1        # InvGamma(shape, rate) on tau_X^2
    tau_rate: float = 0.1
    log_scale_variance: float = 25.0  # N(0, v) on log(lam), log(alpha)

    def __post_init__(self):
        if min(self.coef_variance, self.tau_shape, self.tau_rate, self.log_scale_variance) <= 0:
            raise ValueError("prior hyperparameters must be strictly positive")


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    iterations: int = 20_000
    burn_in: int = 10_000
    thin: int = 10
    seed: int = 0
    adapt_target_multi: float = 0.234
    adapt_target_scalar: float = 0.44
    init_coef_scale: float = 0.1
    init_log_scale: float = 0.2
    init_u_scale: float = 0.5
    u_updates: int = 2
    overdispersed_init: float = 0.25

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.chains < 1:
            raise ValueError("need at least one chain")

    @property
    def draws_per_chain(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


def spec_param_names(spec: ModelSpec) -> list[str]:
    names = [f"phi_Y_{i}" for i in range(6)] + [f"phi_X_{i}" for i in range(2)] + ["tau_X2"]
    if spec.include_A:
        names += [f"phi_A_{i}" for i in range(4)]
    if spec.include_T:
        names += [f"phi_T_{i}" for i in range(2)] + ["lam", "alpha"]
    coords = [c for c, keep in zip(EFFECT_ORDER, spec.effect_mask) if keep]
    for i, ci in enumerate(coords):
        for cj in coords[i:]:
            names.append(f"Sigma_{ci}{cj}")
    return names


@dataclass
class PosteriorDraws:
    spec: ModelSpec
    names: list[str]
    samples: np.ndarray          # (n_draws, n_params)
    chain: np.ndarray            # (n_draws,)
    iteration: np.ndarray        # (n_draws,)
    acceptance: dict[str, list[float]]  # block -> per-chain rate
    config: McmcConfig
    priors: Priors = field(default_factory=Priors)

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.names.index(name)]

    def to_param_list(self) -> list[JointParams]:
        """Reconstruct JointParams per draw; excluded blocks get inert
        placeholders (zeros / unit scales / identity covariance rows)."""
        coords = [i for i, keep in enumerate(self.spec.effect_mask) if keep]
        out = []
        idx = {n: i for i, n in enumerate(self.names)}
        for row in self.samples:
            sigma = np.eye(3)
            kept = [c for c, keep in zip(EFFECT_ORDER, self.spec.effect_mask) if keep]
            for i, ci in enumerate(kept):
                for cj in kept[i:]:
                    v = row[idx[f"Sigma_{ci}{cj}"]]
                    a, b = coords[i], coords[kept.index(cj)]
                    sigma[a, b] = sigma[b, a] = v
            out.append(JointParams(
                phi_Y=row[[idx[f"phi_Y_{i}"] for i in range(6)]],
                phi_X=row[[idx[f"phi_X_{i}"] for i in range(2)]],
                tau_X2=float(row[idx["tau_X2"]]),
                phi_A=(row[[idx[f"phi_A_{i}"] for i in range(4)]]
                       if self.spec.include_A else np.zeros(4)),
                phi_T=(row[[idx[f"phi_T_{i}"] for i in range(2)]]
                       if self.spec.include_T else np.zeros(2)),
                lam=float(row[idx["lam"]]) if self.spec.include_T else 1.0,
                alpha=float(row[idx["alpha"]]) if self.spec.include_T else 1.0,
                Sigma=sigma))
        return out

    def save(self, csv_path: str | Path, meta_path: str | Path | None = None) -> None:
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iter"] + self.names)
            for c, it, row in zip(self.chain, self.iteration, self.samples):
                w.writerow([int(c), int(it)] + [repr(float(v)) for v in row])
        meta = {
            "spec": self.spec.label,
            "config": {k: getattr(self.config, k) for k in
                       ("chains", "iterations", "burn_in", "thin", "seed")},
            "priors": {k: getattr(self.priors, k) for k in
                       ("coef_variance", "tau_shape", "tau_rate", "log_scale_variance")},
            "acceptance": self.acceptance,
            "names": self.names,
        }
        meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path: str | Path, meta_path: str | Path | None = None) -> "PosteriorDraws":
        csv_path = Path(csv_path)
        meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
        meta = json.loads(meta_path.read_text())
        rows, chains, iters = [], [], []
        with open(csv_path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            names = header[2:]
            for rec in rd:
                chains.append(int(rec[0]))
                iters.append(int(rec[1]))
                rows.append([float(v) for v in rec[2:]])
        cfg = McmcConfig(**{**meta["config"]})
        return cls(spec=ModelSpec.parse(meta["spec"]), names=names,
                   samples=np.array(rows), chain=np.array(chains),
                   iteration=np.array(iters), acceptance=meta["acceptance"], config=cfg,
                   priors=Priors(**meta.get("priors", {})))


# ---------------------------------------------------------------------------
# flattened data


class FlatData:
    """Dataset unrolled to per-visit arrays with fixed regressor matrices."""

    def __init__(self, paths: list[PatientPath]):
        self.n = len(paths)
        ind, y, x, gap, a, first = [], [], [], [], [], []
        H_Y = []
        indA, HA, a_resp = [], [], []
        indT, HT, gap_resp = [], [], []
        HTc, cgap = [], []
        for i, p in enumerate(paths):
            m = p.n_visits
            for j in range(1, m + 1):
                ind.append(i)
                y.append(p.outcomes[j - 1])
                x.append(p.covariates[j - 1])
                a.append(p.treatments[j - 1])
                first.append(j == 1)
                if j == 1:
                    gap.append(0.0)
                    H_Y.append(outcome_features(0.0, 0.0, 0.0, first=True))
                else:
                    g = p.visit_times[j - 1] - p.visit_times[j - 2]
                    a_prev = p.treatments[j - 2]
                    x_prev = p.covariates[j - 2]
                    gap.append(g)
                    H_Y.append(outcome_features(g, p.covariates[j - 1], a_prev))
                    indA.append(i)
                    HA.append(treatment_features(p.outcomes[j - 1], p.covariates[j - 1], a_prev))
                    a_resp.append(p.treatments[j - 1])
                    indT.append(i)
                    HT.append(state_features(x_prev, a_prev))
                    gap_resp.append(g)
            HTc.append(state_features(p.covariates[m - 1], p.treatments[m - 1]))
            cgap.append(p.censor_time - p.visit_times[m - 1])
        self.ind = np.array(ind, dtype=np.int64)
        self.y = np.array(y)
        self.x = np.array(x)
        self.a = np.array(a)
        self.first = np.array(first, dtype=bool)
        self.H_Y = np.array(H_Y).reshape(-1, 6)
        if len(self.x):
            # rows are grouped by individual, so the previous row is the
            # previous visit except at first visits, which are zeroed
            x_prev = np.concatenate([[0.0], self.x[:-1]]) * ~self.first
            a_prev = np.concatenate([[0.0], self.a[:-1]]) * ~self.first
        else:
            x_prev = a_prev = np.zeros(0)
        self.H_X = np.column_stack([x_prev, a_prev]) if len(self.x) else np.zeros((0, 2))
        self.sign_y = 2.0 * self.y - 1.0
        self.ind_A = np.array(indA, dtype=np.int64)
        self.H_A = np.array(HA).reshape(-1, 4)
        self.a_resp = np.array(a_resp)
        self.sign_a = 2.0 * self.a_resp - 1.0
        self.ind_T = np.array(indT, dtype=np.int64)
        self.H_T = np.array(HT).reshape(-1, 2)
        self.gap_resp = np.array(gap_resp)
        self.log_gap = np.log(self.gap_resp) if len(self.gap_resp) else np.zeros(0)
        self.H_Tc = np.array(HTc).reshape(-1, 2)
        self.cgap = np.array(cgap)
        self.log_cgap = np.log(self.cgap)


def _ll_outcome_rows(flat: FlatData, phi_Y, u_w):
    lin = flat.H_Y @ phi_Y + u_w[flat.ind]
    return log_ndtr(flat.sign_y * lin)


def _ll_covariate_rows(flat: FlatData, phi_X, tau2):
    resid = flat.x - flat.H_X @ phi_X
    return -0.5 * math.log(2 * math.pi * tau2) - 0.5 * resid ** 2 / tau2


def _ll_treatment_rows(flat: FlatData, phi_A, u_a):
    lin = flat.H_A @ phi_A + u_a[flat.ind_A]
    return log_ndtr(flat.sign_a * lin)


def _ll_gap_rows(flat: FlatData, phi_T, lam, alpha, u_t):
    log_b = math.log(lam) + flat.H_T @ phi_T + u_t[flat.ind_T]
    return log_b + math.log(alpha) + (alpha - 1.0) * flat.log_gap - np.exp(log_b + alpha * flat.log_gap)


def _ll_censor_rows(flat: FlatData, phi_T, lam, alpha, u_t):
    log_b = math.log(lam) + flat.H_Tc @ phi_T + u_t
    return -np.exp(log_b + alpha * flat.log_cgap)


def _logprior_u_rows(u, prec):
    return -0.5 * np.einsum("ij,jk,ik->i", u, prec, u)


def joint_log_posterior(params: JointParams, u: np.ndarray, paths: list[PatientPath],
                        spec: ModelSpec, priors: Priors = Priors()) -> float:
    """Log joint posterior density (up to a constant) at explicit latent
    effects.  ``u`` is (n, n_effects) in the spec's kept coordinate order
    (subset of T, W, A); n may be zero, leaving only the prior terms."""
    flat = paths if isinstance(paths, FlatData) else FlatData(paths)
    u = np.asarray(u, dtype=float).reshape(flat.n, spec.n_effects)
    coords = {c: i for i, c in enumerate(
        [c for c, keep in zip(EFFECT_ORDER, spec.effect_mask) if keep])}
    u_w = u[:, coords["W"]] if flat.n else np.zeros(0)
    total = 0.0
    if flat.n:
        total += _ll_outcome_rows(flat, params.phi_Y, u_w).sum()
        total += _ll_covariate_rows(flat, params.phi_X, params.tau_X2).sum()
        if spec.include_A:
            total += _ll_treatment_rows(flat, params.phi_A, u[:, coords["A"]]).sum()
        if spec.include_T:
            u_t = u[:, coords["T"]]
            total += _ll_gap_rows(flat, params.phi_T, params.lam, params.alpha, u_t).sum()
            total += _ll_censor_rows(flat, params.phi_T, params.lam, params.alpha, u_t).sum()
        sig = _spec_sigma(params.Sigma, spec)
        chol = np.linalg.cholesky(sig)
        z = np.linalg.solve(chol, u.T)
        total += -0.5 * np.sum(z * z)
        total += flat.n * (-0.5 * spec.n_effects * math.log(2 * math.pi)
                           - np.log(np.diag(chol)).sum())
    total += _logprior_params(params, spec, priors)
    return float(total)


def _spec_sigma(Sigma: np.ndarray, spec: ModelSpec) -> np.ndarray:
    keep = np.where(spec.effect_mask)[0]
    return Sigma[np.ix_(keep, keep)]


def _logprior_params(params: JointParams, spec: ModelSpec, priors: Priors) -> float:
    v = priors.coef_variance
    total = -0.5 * np.sum(params.phi_Y ** 2) / v - 0.5 * np.sum(params.phi_X ** 2) / v
    total += -(priors.tau_shape + 1.0) * math.log(params.tau_X2) - priors.tau_rate / params.tau_X2
    if spec.include_A:
        total += -0.5 * np.sum(params.phi_A ** 2) / v
    if spec.include_T:
        total += -0.5 * np.sum(params.phi_T ** 2) / v
        total += -0.5 * math.log(params.lam) ** 2 / priors.log_scale_variance
        total += -0.5 * math.log(params.alpha) ** 2 / priors.log_scale_variance
    p = spec.n_effects
    sig = _spec_sigma(params.Sigma, spec)
    chol = np.linalg.cholesky(sig)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    # InverseWishart(I_p, p): ~ |S|^-(p + (p+1)/2 ... ) up to constants
    total += -0.5 * (2 * p + 1) * logdet - 0.5 * np.trace(np.linalg.inv(sig))
    return float(total)


def update_sigma(u: np.ndarray, dof: int, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Conjugate inverse-Wishart draw given latent effects (prior draw at n=0)."""
    u = np.asarray(u, dtype=float)
    n = u.shape[0] if u.ndim == 2 else 0
    scatter = u.T @ u if n else np.zeros_like(scale)
    return invwishart.rvs(df=dof + n, scale=scale + scatter, random_state=rng)


# ---------------------------------------------------------------------------
# the sampler


class _BlockScale:
    def __init__(self, scale: float, target: float):
        self.log_scale = math.log(scale)
        self.target = target
        self.accepted = 0.0
        self.proposed = 0

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    def adapt(self, acc_rate: float, sweep: int):
        self.log_scale += (acc_rate - self.target) / max(1.0, sweep ** 0.6)

    def record(self, acc_rate: float):
        self.accepted += acc_rate
        self.proposed += 1

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


class _CovAdapt(_BlockScale):
    """Coefficient-block proposals shaped by the chain's running covariance
    (with the usual Robbins-Monro global scale), frozen after burn-in.
    Interaction terms make isotropic walks mix poorly here."""

    def __init__(self, dim: int, scale: float, target: float):
        super().__init__(scale, target)
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))
        self.chol = np.eye(dim)

    def observe(self, x: np.ndarray):
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += np.outer(d, x - self.mean)
        if self.count >= 50 * self.dim and self.count % 100 == 0:
            cov = self.m2 / (self.count - 1) + 1e-8 * np.eye(self.dim)
            try:
                self.chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                pass

    def step(self, rng: np.random.Generator) -> np.ndarray:
        return self.scale * (self.chol @ rng.standard_normal(self.dim))


def _run_chain(flat: FlatData, spec: ModelSpec, priors: Priors, config: McmcConfig,
               chain_id: int) -> tuple[np.ndarray, dict[str, float]]:
    rng = substream(config.seed, "chain", chain_id)
    n = flat.n
    p = spec.n_effects
    coords = {c: i for i, c in enumerate(
        [c for c, keep in zip(EFFECT_ORDER, spec.effect_mask) if keep])}

    # overdispersed per-chain starting points
    od = config.overdispersed_init
    phi_Y = od * rng.standard_normal(6)
    phi_X = od * rng.standard_normal(2)
    log_tau2 = od * rng.standard_normal()
    phi_A = od * rng.standard_normal(4)
    phi_T = od * rng.standard_normal(2)
    log_lam = od * rng.standard_normal()
    log_alpha = od * rng.standard_normal()
    u = np.zeros((n, p))
    sigma = np.eye(p)
    prec = np.eye(p)

    u_w = u[:, coords["W"]] if n else np.zeros(0)

    def rows_y(phi, uw):
        return _ll_outcome_rows(flat, phi, uw)

    rows_Y = rows_y(phi_Y, u_w)
    rows_X = _ll_covariate_rows(flat, phi_X, math.exp(log_tau2))
    rows_A = (_ll_treatment_rows(flat, phi_A, u[:, coords["A"]])
              if spec.include_A and n else np.zeros(0))
    if spec.include_T and n:
        rows_T = _ll_gap_rows(flat, phi_T, math.exp(log_lam), math.exp(log_alpha), u[:, coords["T"]])
        rows_C = _ll_censor_rows(flat, phi_T, math.exp(log_lam), math.exp(log_alpha), u[:, coords["T"]])
    else:
        rows_T = np.zeros(0)
        rows_C = np.zeros(0)
    prior_u = _logprior_u_rows(u, prec) if n else np.zeros(0)

    v = priors.coef_variance
    tmulti, tscalar = config.adapt_target_multi, config.adapt_target_scalar
    blocks = {
        "phi_Y": _CovAdapt(6, config.init_coef_scale, tmulti),
        "phi_X": _CovAdapt(2, config.init_coef_scale, tmulti),
        "log_tau2": _BlockScale(config.init_log_scale, tscalar),
    }
    if spec.include_A:
        blocks["phi_A"] = _CovAdapt(4, config.init_coef_scale, tmulti)
    if spec.include_T:
        blocks["phi_T"] = _CovAdapt(2, config.init_coef_scale, tmulti)
        blocks["log_lam"] = _BlockScale(config.init_log_scale, tscalar)
        blocks["log_alpha"] = _BlockScale(config.init_log_scale, tscalar)
    if n:
        blocks["u"] = _BlockScale(config.init_u_scale, tmulti if p > 1 else tscalar)

    names = spec_param_names(spec)
    keep = np.zeros((config.draws_per_chain, len(names)))
    keep_iter = np.zeros(config.draws_per_chain, dtype=np.int64)
    kept = 0

    def record_state():
        vals = list(phi_Y) + list(phi_X) + [math.exp(log_tau2)]
        if spec.include_A:
            vals += list(phi_A)
        if spec.include_T:
            vals += list(phi_T) + [math.exp(log_lam), math.exp(log_alpha)]
        for i in range(p):
            for j in range(i, p):
                vals.append(sigma[i, j])
        return np.array(vals)

    def mh_step(name, delta, sweep, adapting):
        """Scalar accept/reject; returns True on acceptance."""
        blk = blocks[name]
        acc = math.isfinite(delta) and math.log(rng.random()) <= delta
        if adapting:
            blk.adapt(1.0 if acc else 0.0, sweep)
        else:
            blk.record(1.0 if acc else 0.0)
        return acc

    for sweep in range(1, config.iterations + 1):
        adapting = sweep <= config.burn_in

        # coefficient vector blocks
        prop = phi_Y + blocks["phi_Y"].step(rng)
        new_rows = rows_y(prop, u_w)
        delta = (new_rows.sum() - rows_Y.sum()) - 0.5 * (prop @ prop - phi_Y @ phi_Y) / v
        if mh_step("phi_Y", delta, sweep, adapting):
            phi_Y, rows_Y = prop, new_rows
        if adapting:
            blocks["phi_Y"].observe(phi_Y)

        prop = phi_X + blocks["phi_X"].step(rng)
        new_rows = _ll_covariate_rows(flat, prop, math.exp(log_tau2))
        delta = (new_rows.sum() - rows_X.sum()) - 0.5 * (prop @ prop - phi_X @ phi_X) / v
        if mh_step("phi_X", delta, sweep, adapting):
            phi_X, rows_X = prop, new_rows
        if adapting:
            blocks["phi_X"].observe(phi_X)

        prop_lt = log_tau2 + blocks["log_tau2"].scale * rng.standard_normal()
        new_rows = _ll_covariate_rows(flat, phi_X, math.exp(prop_lt))
        # InvGamma prior on tau2 with the log-scale Jacobian folded in
        delta = (new_rows.sum() - rows_X.sum()
                 - priors.tau_shape * (prop_lt - log_tau2)
                 - priors.tau_rate * (math.exp(-prop_lt) - math.exp(-log_tau2)))
        if mh_step("log_tau2", delta, sweep, adapting):
            log_tau2, rows_X = prop_lt, new_rows

        if spec.include_A:
            prop = phi_A + blocks["phi_A"].step(rng)
            new_rows = (_ll_treatment_rows(flat, prop, u[:, coords["A"]]) if n else np.zeros(0))
            delta = (new_rows.sum() - rows_A.sum()) - 0.5 * (prop @ prop - phi_A @ phi_A) / v
            if mh_step("phi_A", delta, sweep, adapting):
                phi_A, rows_A = prop, new_rows
            if adapting:
                blocks["phi_A"].observe(phi_A)

        if spec.include_T:
            u_t = u[:, coords["T"]] if n else np.zeros(0)
            for name in ("phi_T", "log_lam", "log_alpha"):
                blk = blocks[name]
                pT, pl, pa = phi_T, log_lam, log_alpha
                if name == "phi_T":
                    pT = phi_T + blk.step(rng)
                    dprior = -0.5 * (pT @ pT - phi_T @ phi_T) / v
                elif name == "log_lam":
                    pl = log_lam + blk.scale * rng.standard_normal()
                    dprior = -0.5 * (pl ** 2 - log_lam ** 2) / priors.log_scale_variance
                else:
                    pa = log_alpha + blk.scale * rng.standard_normal()
                    dprior = -0.5 * (pa ** 2 - log_alpha ** 2) / priors.log_scale_variance
                if n:
                    nT = _ll_gap_rows(flat, pT, math.exp(pl), math.exp(pa), u_t)
                    nC = _ll_censor_rows(flat, pT, math.exp(pl), math.exp(pa), u_t)
                    delta = (nT.sum() - rows_T.sum()) + (nC.sum() - rows_C.sum()) + dprior
                else:
                    nT, nC = rows_T, rows_C
                    delta = dprior
                if mh_step(name, delta, sweep, adapting):
                    phi_T, log_lam, log_alpha = pT, pl, pa
                    rows_T, rows_C = nT, nC
            if adapting:
                blocks["phi_T"].observe(phi_T)

        for _ in range(config.u_updates if n else 0):
            # per-individual effect block, vectorized accept/reject
            blk = blocks["u"]
            prop_u = u + blk.scale * rng.standard_normal((n, p))
            pu_w = prop_u[:, coords["W"]]
            n_rows_Y = rows_y(phi_Y, pu_w)
            d_i = np.bincount(flat.ind, weights=n_rows_Y - rows_Y, minlength=n)
            if spec.include_A:
                n_rows_A = _ll_treatment_rows(flat, phi_A, prop_u[:, coords["A"]])
                d_i += np.bincount(flat.ind_A, weights=n_rows_A - rows_A, minlength=n)
            if spec.include_T:
                pu_t = prop_u[:, coords["T"]]
                n_rows_T = _ll_gap_rows(flat, phi_T, math.exp(log_lam), math.exp(log_alpha), pu_t)
                n_rows_C = _ll_censor_rows(flat, phi_T, math.exp(log_lam), math.exp(log_alpha), pu_t)
                d_i += np.bincount(flat.ind_T, weights=n_rows_T - rows_T, minlength=n)
                d_i += n_rows_C - rows_C
            new_prior_u = _logprior_u_rows(prop_u, prec)
            d_i += new_prior_u - prior_u
            acc = np.log(rng.random(n)) <= d_i
            if acc.any():
                u[acc] = prop_u[acc]
                u_w = u[:, coords["W"]]
                mask = acc[flat.ind]
                rows_Y = np.where(mask, n_rows_Y, rows_Y)
                if spec.include_A:
                    rows_A = np.where(acc[flat.ind_A], n_rows_A, rows_A)
                if spec.include_T:
                    rows_T = np.where(acc[flat.ind_T], n_rows_T, rows_T)
                    rows_C = np.where(acc, n_rows_C, rows_C)
                prior_u = np.where(acc, new_prior_u, prior_u)
            rate = float(acc.mean())
            if adapting:
                blk.adapt(rate, sweep)
            else:
                blk.record(rate)

        # conjugate covariance update (a prior draw when n = 0)
        sigma = np.atleast_2d(update_sigma(u, dof=p, scale=np.eye(p), rng=rng))
        if n:
            prec = np.linalg.inv(sigma)
            prior_u = _logprior_u_rows(u, prec)

        if not math.isfinite(rows_Y.sum() + rows_X.sum()):
            raise ChainDivergedError(chain_id, sweep)

        if sweep > config.burn_in and (sweep - config.burn_in) % config.thin == 0:
            keep[kept] = record_state()
            keep_iter[kept] = sweep
            kept += 1

    rates = {name: blk.rate for name, blk in blocks.items()}
    return keep[:kept], {"iters": keep_iter[:kept], "rates": rates}


def run_mcmc(data, spec: ModelSpec, priors: Priors = Priors(),
             config: McmcConfig = McmcConfig()) -> PosteriorDraws:
    """Posterior draws for one model specification.

    ``data`` is a Dataset, a list of PatientPath, or an empty list for a
    prior-only run.  Chains are independent and seeded by (seed, chain), so
    results do not depend on execution order.
    """
    paths = getattr(data, "paths", data)
    flat = FlatData(paths)
    samples, chain_ix, iters = [], [], []
    acceptance: dict[str, list[float]] = {}
    for c in range(config.chains):
        draws, info = _run_chain(flat, spec, priors, config, c)
        samples.append(draws)
        chain_ix.append(np.full(len(draws), c))
        iters.append(info["iters"])
        for name, rate in info["rates"].items():
            acceptance.setdefault(name, []).append(rate)
    return PosteriorDraws(
        spec=spec, names=spec_param_names(spec), samples=np.vstack(samples),
        chain=np.concatenate(chain_ix), iteration=np.concatenate(iters),
        acceptance=acceptance, config=config, priors=priors)
