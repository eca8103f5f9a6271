"""Domain types, link functions and per-process conditional log-densities.

The joint model has four sub-processes observed at irregular visits:

* outcome   Y_j ~ Bernoulli(probit) with individual effect u_W
* covariate X_j ~ Normal, no individual effect
* treatment A_j ~ Bernoulli(probit) with individual effect u_A, from visit 2 on
* visit gap G_j = t_j - t_{j-1} ~ Weibull whose hazard is scaled by exp(u_T)

Regressor conventions (fixed by the simulation-study family):

* outcome:   [1, gap_j, x_j, a_{j-1}, a_{j-1}*x_j, a_{j-1}*gap_j]; the first
  visit uses the initialization vector [1, 0, 0, 0, 0, 0]
* covariate: [x_{j-1}, a_{j-1}]
* treatment: [1, y_j, x_j, a_{j-1}]
* visit gap: [x_{j-1}, a_{j-1}]

with x_0 = a_0 = 0.  The time entering the outcome regressors is the
inter-visit gap, i.e. how long the previous treatment has been acting when
the outcome is measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_ndtr, ndtr

# Probabilities are clamped to keep Bernoulli log-densities finite.
PROB_CLAMP = 1e-12

# Random-effect coordinate order used everywhere: (u_T, u_W, u_A).
EFFECT_ORDER = ("T", "W", "A")

Y_DIM, A_DIM, X_DIM, T_DIM = 6, 4, 2, 2


# ---------------------------------------------------------------------------
# parameters and model specification


@dataclass(frozen=True)
class JointParams:
    """All parameters of the joint model (dose-response extras optional)."""

    phi_Y: np.ndarray
    phi_X: np.ndarray
    tau_X2: float
    phi_A: np.ndarray
    phi_T: np.ndarray
    lam: float
    alpha: float
    Sigma: np.ndarray
    mu: float = 0.0
    tau2: float = 1.0

    def __post_init__(self):
        for name, arr, dim in (("phi_Y", self.phi_Y, Y_DIM), ("phi_X", self.phi_X, X_DIM),
                               ("phi_A", self.phi_A, A_DIM), ("phi_T", self.phi_T, T_DIM)):
            a = np.asarray(arr, dtype=float)
            if a.shape != (dim,):
                raise ValueError(f"{name} must have shape ({dim},), got {a.shape}")
            object.__setattr__(self, name, a)
        sig = np.asarray(self.Sigma, dtype=float)
        if sig.shape != (3, 3) or not np.allclose(sig, sig.T):
            raise ValueError("Sigma must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(sig) < -1e-12):
            raise ValueError("Sigma must be positive semi-definite")
        object.__setattr__(self, "Sigma", sig)
        for name, v in (("tau_X2", self.tau_X2), ("lam", self.lam),
                        ("alpha", self.alpha), ("tau2", self.tau2)):
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a positive finite real, got {v}")

    @property
    def sigma_ww(self) -> float:
        """Marginal variance of the outcome-process random effect."""
        return float(self.Sigma[1, 1])

    def with_sigma(self, Sigma: np.ndarray) -> "JointParams":
        return replace(self, Sigma=np.asarray(Sigma, dtype=float))


def default_params() -> JointParams:
    """Data-generating parameters of the simulation-study model.

    The treatment model's lagged-treatment coefficient is zero: the study's
    assignment process depends on the current marks only.
    """
    sigma = np.full((3, 3), 0.216)
    np.fill_diagonal(sigma, 0.36)
    return JointParams(
        phi_Y=np.array([-0.3, 0.3, 0.3, 0.55, -0.5, -0.5]),
        phi_X=np.array([0.4, 0.4]),
        tau_X2=0.3,
        phi_A=np.array([0.2, -0.2, 0.2, 0.0]),
        phi_T=np.array([-0.3, 0.5]),
        lam=0.2,
        alpha=3.5,
        Sigma=sigma,
    )


@dataclass(frozen=True)
class ModelSpec:
    """Which processes are jointly modeled. The outcome/covariate pair is
    always present; treatment and visit processes are optional."""

    include_A: bool = True
    include_T: bool = True

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        letters = {p.strip().upper() for p in text.replace("(", "").replace(")", "").split(",") if p.strip()}
        if "Y" not in letters or not letters <= {"Y", "A", "T"}:
            raise ValueError(f"unrecognized model spec {text!r}; expected a subset of Y,A,T containing Y")
        return cls(include_A="A" in letters, include_T="T" in letters)

    @property
    def label(self) -> str:
        parts = ["Y"] + (["A"] if self.include_A else []) + (["T"] if self.include_T else [])
        return ",".join(parts)

    @property
    def effect_mask(self) -> np.ndarray:
        """Boolean mask over the (T, W, A) effect coordinates kept by this spec."""
        return np.array([self.include_T, True, self.include_A])

    @property
    def n_effects(self) -> int:
        return int(self.effect_mask.sum())


ALL_SPECS = (ModelSpec(True, True), ModelSpec(True, False), ModelSpec(False, True), ModelSpec(False, False))


@dataclass(frozen=True)
class RandomEffects:
    """One individual's latent triple; the visit frailty is exp(u_T_log)."""

    u_T_log: float
    u_W: float
    u_A: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u_T_log, self.u_W, self.u_A])


# ---------------------------------------------------------------------------
# trajectories and histories


@dataclass
class PatientPath:
    """One individual's irregular trajectory.

    ``treatments`` is visit-aligned: ``treatments[j-1]`` is the treatment
    assigned at visit j (0 at the first visit for generated observational
    data, where assignment starts at visit 2).
    """

    visit_times: np.ndarray
    outcomes: np.ndarray
    covariates: np.ndarray
    treatments: np.ndarray
    censor_time: float

    def __post_init__(self):
        self.visit_times = np.asarray(self.visit_times, dtype=float)
        self.outcomes = np.asarray(self.outcomes, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float)
        self.treatments = np.asarray(self.treatments, dtype=float)
        m = self.n_visits
        if m < 1:
            raise ValueError("a path needs at least one visit")
        if np.any(np.diff(self.visit_times) <= 0) or self.visit_times[0] < 0:
            raise ValueError("visit times must be strictly increasing and nonnegative")
        if len(self.outcomes) != m or len(self.covariates) != m or len(self.treatments) != m:
            raise ValueError("outcomes/covariates/treatments must align with visit_times")
        if self.censor_time <= self.visit_times[-1]:
            raise ValueError("censor_time must exceed the last visit time")

    @property
    def n_visits(self) -> int:
        return len(self.visit_times)


@dataclass
class History:
    """Prefix of a trajectory used for conditioning: k visits with marks and
    the treatments assigned so far (a treatment at the final visit is allowed,
    e.g. when a target-trial decision has already been taken)."""

    visit_times: np.ndarray
    outcomes: np.ndarray
    covariates: np.ndarray
    treatments: np.ndarray  # visit-aligned, like PatientPath

    def __post_init__(self):
        self.visit_times = np.asarray(self.visit_times, dtype=float)
        self.outcomes = np.asarray(self.outcomes, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float)
        self.treatments = np.asarray(self.treatments, dtype=float)
        k = self.stage
        if k and (np.any(np.diff(self.visit_times) <= 0) or self.visit_times[0] < 0):
            raise ValueError("visit times must be strictly increasing and nonnegative")
        if len(self.outcomes) != k or len(self.covariates) != k or len(self.treatments) != k:
            raise ValueError("outcomes/covariates/treatments must align with visit_times")

    @property
    def stage(self) -> int:
        return len(self.visit_times)

    @classmethod
    def empty(cls) -> "History":
        z = np.zeros(0)
        return cls(z, z, z, z)

    @classmethod
    def single_visit(cls, t: float, x: float, y: float, a: float = 0.0) -> "History":
        return cls(np.array([t]), np.array([y]), np.array([x]), np.array([a]))

    @classmethod
    def from_path(cls, path: PatientPath, k: int) -> "History":
        if not 1 <= k <= path.n_visits:
            raise ValueError(f"stage {k} outside 1..{path.n_visits}")
        return cls(path.visit_times[:k].copy(), path.outcomes[:k].copy(),
                   path.covariates[:k].copy(), path.treatments[:k].copy())

    def extended(self, t: float, x: float, y: float, a_at_new_visit: float = 0.0) -> "History":
        return History(
            np.append(self.visit_times, t), np.append(self.outcomes, y),
            np.append(self.covariates, x), np.append(self.treatments, a_at_new_visit))


PATIENT_ONE = History.single_visit(t=1.0, x=-0.35, y=1.0)
PATIENT_TWO = History.single_visit(t=1.0, x=0.35, y=0.0)


# ---------------------------------------------------------------------------
# regimes and feasible sets


@dataclass(frozen=True)
class FeasibleSet:
    """Treatment options permitted at a stage. ``cap_total`` of None means
    both arms are always available; otherwise arm 1 closes once the count of
    treatments already given reaches the cap."""

    cap_total: int | None = None

    def arms(self, n_prior_treatments: int) -> tuple[int, ...]:
        if self.cap_total is not None and n_prior_treatments >= self.cap_total:
            return (0,)
        return (0, 1)


@dataclass(frozen=True)
class Regime:
    """Treatment plan over future decision stages.

    ``fixed`` holds one treatment per decision stage, or None for the
    optimal (backwards-induction) regime.  ``future_times`` are the visit
    times t_{k+1}..t_{K+1} at which outcomes accrue; decisions are taken at
    the conditioning visit and at each future visit except the last.
    """

    future_times: tuple[float, ...]
    fixed: tuple[int, ...] | None = None
    feasible: FeasibleSet = field(default_factory=FeasibleSet)
    gamma: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.future_times) < 1:
            raise ValueError("regime needs at least one future visit time")
        if np.any(np.diff(self.future_times) <= 0):
            raise ValueError("future_times must be strictly increasing")
        if self.fixed is not None and len(self.fixed) != self.n_stages:
            raise ValueError(f"fixed regime must assign {self.n_stages} treatments")
        if self.gamma is not None:
            if len(self.gamma) != self.n_stages:
                raise ValueError("gamma must weight each future outcome")
            if any(g < 0 for g in self.gamma):
                raise ValueError("gamma weights must be nonnegative")

    @property
    def n_stages(self) -> int:
        return len(self.future_times)

    @property
    def is_optimal(self) -> bool:
        return self.fixed is None

    def weights(self) -> np.ndarray:
        return np.ones(self.n_stages) if self.gamma is None else np.asarray(self.gamma, dtype=float)


# ---------------------------------------------------------------------------
# links and densities


def probit_prob(lin):
    """Standard normal CDF of the linear predictor, clamped away from 0/1."""
    lin = np.asarray(lin, dtype=float)
    if not np.all(np.isfinite(lin)):
        raise ValueError("non-finite linear predictor")
    return np.clip(ndtr(lin), PROB_CLAMP, 1 - PROB_CLAMP)


def bernoulli_probit_loglik(y, lin):
    """log p(y) for y ~ Bern(Phi(lin)); fractional y gives the tilted density
    p^y (1-p)^(1-y) used with mean pseudo-marks."""
    y = np.asarray(y, dtype=float)
    lin = np.asarray(lin, dtype=float)
    lp = np.maximum(log_ndtr(lin), math.log(PROB_CLAMP))
    lq = np.maximum(log_ndtr(-lin), math.log(PROB_CLAMP))
    return y * lp + (1.0 - y) * lq


def log_density_outcome(y, features, u_W, phi_Y):
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[-1] != len(phi_Y):
        raise ValueError("outcome feature/coefficient dimension mismatch")
    out = bernoulli_probit_loglik(y, features @ np.asarray(phi_Y, dtype=float) + u_W)
    return out if out.size > 1 else float(out.item())


def log_density_covariate(x, features, phi_X, tau_X2):
    if tau_X2 <= 0:
        raise ValueError("tau_X2 must be positive")
    features = np.atleast_2d(np.asarray(features, dtype=float))
    mean = features @ np.asarray(phi_X, dtype=float)
    out = -0.5 * math.log(2 * math.pi * tau_X2) - 0.5 * (np.asarray(x, dtype=float) - mean) ** 2 / tau_X2
    return out if out.size > 1 else float(out.item())


def log_density_treatment(a, features, u_A, phi_A):
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[-1] != len(phi_A):
        raise ValueError("treatment feature/coefficient dimension mismatch")
    out = bernoulli_probit_loglik(a, features @ np.asarray(phi_A, dtype=float) + u_A)
    return out if out.size > 1 else float(out.item())


def weibull_hazard_multiplier(features, u_T_log, phi_T, lam):
    """b = lam * exp(u_T) * exp(features . phi_T); multiplies the cumulative
    hazard so that S(g) = exp(-b g^alpha)."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    return lam * np.exp(u_T_log + features @ np.asarray(phi_T, dtype=float))


def log_density_visit_gap(gap, features, u_T_log, phi_T, lam, alpha):
    gap = np.asarray(gap, dtype=float)
    if np.any(gap <= 0):
        raise ValueError("gap must be positive for the density")
    if lam <= 0 or alpha <= 0:
        raise ValueError("lam and alpha must be positive")
    b = weibull_hazard_multiplier(features, u_T_log, phi_T, lam)
    out = np.log(b) + math.log(alpha) + (alpha - 1) * np.log(gap) - b * gap ** alpha
    return out if out.size > 1 else float(out.item())


def log_survival_visit_gap(gap, features, u_T_log, phi_T, lam, alpha):
    gap = np.asarray(gap, dtype=float)
    if np.any(gap < 0):
        raise ValueError("gap must be nonnegative for the survival")
    if lam <= 0 or alpha <= 0:
        raise ValueError("lam and alpha must be positive")
    b = weibull_hazard_multiplier(features, u_T_log, phi_T, lam)
    out = -b * gap ** alpha
    return out if out.size > 1 else float(out.item())


def mvn_logpdf(u, cov):
    """MVN(0, cov) log-density; u may be (n, d) or (d,). Requires PD cov."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    d = u.shape[1]
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, u.T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (d * math.log(2 * math.pi) + logdet + np.sum(z * z, axis=0))
    return out if out.size > 1 else float(out.item())


def sigma_factor(Sigma: np.ndarray) -> np.ndarray:
    """Factor F with F F^T = Sigma; falls back to an eigenvalue square root
    for positive semi-definite (possibly singular) matrices."""
    Sigma = np.asarray(Sigma, dtype=float)
    try:
        return np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(Sigma)
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


# ---------------------------------------------------------------------------
# feature builders


def outcome_features(gap, x, a_prev, first=False):
    """Outcome regressors at one visit. ``gap`` is the time since the
    previous visit; the first visit gets the initialization vector."""
    if first:
        return np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    return np.array([1.0, gap, x, a_prev, a_prev * x, a_prev * gap])


def treatment_features(y, x, a_prev):
    return np.array([1.0, y, x, a_prev])


def state_features(x_prev, a_prev):
    """Shared regressors of the covariate and visit-gap processes."""
    return np.array([x_prev, a_prev])


def build_features_sim(process: str, history: History, j: int) -> np.ndarray:
    """Regressor vector of one process at stage j of a history.

    Stage indices are 1-based.  The treatment process starts at visit 2,
    so requesting its features at j=1 is an error.
    """
    k = history.stage
    if not 1 <= j <= k:
        raise ValueError(f"stage {j} outside the history (k={k})")
    t = history.visit_times
    x = history.covariates
    y = history.outcomes
    a = history.treatments
    x_prev = x[j - 2] if j >= 2 else 0.0
    a_prev = a[j - 2] if j >= 2 else 0.0
    process = process.upper()
    if process == "Y":
        if j == 1:
            return outcome_features(0.0, 0.0, 0.0, first=True)
        return outcome_features(t[j - 1] - t[j - 2], x[j - 1], a_prev)
    if process == "A":
        if j == 1:
            raise ValueError("the treatment process starts at visit 2")
        return treatment_features(y[j - 1], x[j - 1], a_prev)
    if process in ("X", "T"):
        return state_features(x_prev, a_prev)
    raise ValueError(f"unknown process {process!r}")


# ---------------------------------------------------------------------------
# dose-response transforms (the applied model family's derived state)


def dr_state(history: History, j: int, eta: float) -> tuple[int, float, float]:
    """(any-prior-treatment indicator, time since last treatment, decayed
    exposure Q*exp(-T_last*eta)) at stage j."""
    if not math.isfinite(eta):
        raise ValueError("eta must be finite")
    k = history.stage
    if not 1 <= j <= k:
        raise ValueError(f"stage {j} outside the history (k={k})")
    if j == 1:
        return 0, 0.0, 0.0
    t = history.visit_times
    a = history.treatments
    treated = [t[l] for l in range(j - 1) if a[l] > 0]
    if not treated:
        return 0, 0.0, 0.0
    t_last = float(t[j - 1] - max(treated))
    return 1, t_last, float(math.exp(-t_last * eta))
