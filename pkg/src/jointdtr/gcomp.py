"""Reward evaluation and optimal-regime search by forward Monte Carlo.

Evaluating a reward conditional on a patient history requires draws of the
outcome-process random effect given that history.  An independence-Metropolis
chain proposes from the random-effect prior; two acceptance conventions are
supported:

* ``corrected`` applies the usual Hastings correction, so the proposal terms
  cancel against the prior and the chain targets likelihood x prior, the
  exact conditional law.
* ``uncorrected`` keeps the prior-density ratio in the acceptance without a
  proposal correction.  The chain then targets likelihood x prior^2, i.e.
  the conditional law with the prior covariance halved.  Reward evaluation
  defaults to this convention; the reference truth values for the two
  benchmark patient profiles (1.132 and 0.952) are defined under it.

Optimal regimes use the backwards-induction-by-forward-enumeration scheme:
at each decision stage every feasible arm is expanded, the next visit's
marks are simulated for all rollouts, and the continuation problem is
re-evaluated on the history extended with the mean simulated mark.  Ties
break toward arm 0.  The alternative that propagates per-rollout marks
instead of the mean (keeping each rollout's own frailty draw, decisions
still by aggregate argmax) is available via ``branch_per_rollout``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (History, JointParams, Regime, bernoulli_probit_loglik,
                    mvn_logpdf, outcome_features, probit_prob, sigma_factor)
from .rngstreams import substream


@dataclass(frozen=True)
class GcompConfig:
    warmup: int = 100
    acceptance: str = "uncorrected"  # "uncorrected" | "corrected"
    branch_per_rollout: bool = False

    def __post_init__(self):
        if self.acceptance not in ("uncorrected", "corrected"):
            raise ValueError(f"unknown acceptance mode {self.acceptance!r}")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")


DEFAULT_CONFIG = GcompConfig()


@dataclass
class RewardEstimate:
    value: float
    mc_std_error: float
    R: int
    per_arm: dict[int, float] | None = None


@dataclass
class OptimalPlan:
    first_action: int
    course: tuple[int, ...]
    arm_values: dict[int, float]


@dataclass
class PosteriorRewardResult:
    """Per-posterior-draw reward evaluations plus their average."""

    values: np.ndarray
    within_se: np.ndarray
    mean: float
    courses: np.ndarray | None = None
    course_frequencies: dict[tuple[int, ...], float] | None = None
    arm_means: dict[int, float] | None = None  # first-arm values averaged over draws

    @property
    def first_actions(self) -> np.ndarray | None:
        return None if self.courses is None else self.courses[:, 0]

    def to_report(self) -> dict:
        rep = {
            "mean_reward": self.mean,
            "n_draws": int(len(self.values)),
            "between_draw_sd": float(np.std(self.values, ddof=1)) if len(self.values) > 1 else 0.0,
            "mean_within_mc_se": float(np.mean(self.within_se)),
            "quantiles": {q: float(np.quantile(self.values, q)) for q in (0.025, 0.25, 0.5, 0.75, 0.975)},
        }
        if self.arm_means is not None:
            rep["first_arm_values"] = {str(a): v for a, v in self.arm_means.items()}
        if self.course_frequencies is not None:
            rep["course_frequencies"] = {
                "".join(str(int(a)) for a in course): freq
                for course, freq in sorted(self.course_frequencies.items(),
                                           key=lambda kv: -kv[1])}
        return rep


# ---------------------------------------------------------------------------
# model family seen by the rollout engine


class ProbitGaussianFamily:
    """Simulation-study mark model, batched over parameter draws.

    Covariates are Gaussian in (previous covariate, previous treatment);
    outcomes are Bernoulli-probit in (gap, current covariate, previous
    treatment) with additive frailty.
    """

    def __init__(self, phi_Y, phi_X, tau_X2, sigma_ww):
        self.phi_Y = np.atleast_2d(np.asarray(phi_Y, dtype=float))
        self.phi_X = np.atleast_2d(np.asarray(phi_X, dtype=float))
        self.tau_X2 = np.atleast_1d(np.asarray(tau_X2, dtype=float))
        self.sigma_ww = np.atleast_1d(np.asarray(sigma_ww, dtype=float))
        self.size = self.phi_Y.shape[0]

    @classmethod
    def from_params(cls, params: JointParams) -> "ProbitGaussianFamily":
        return cls(params.phi_Y, params.phi_X, params.tau_X2, params.sigma_ww)

    @classmethod
    def from_param_list(cls, params: list[JointParams]) -> "ProbitGaussianFamily":
        return cls(np.stack([p.phi_Y for p in params]),
                   np.stack([p.phi_X for p in params]),
                   np.array([p.tau_X2 for p in params]),
                   np.array([p.sigma_ww for p in params]))

    def sample_covariate(self, x_prev, arm, rng, n_rollouts):
        mean = self.phi_X[:, 0] * x_prev + self.phi_X[:, 1] * arm
        sd = np.sqrt(self.tau_X2)
        return mean + sd * rng.standard_normal((n_rollouts, self.size))

    def outcome_lin(self, gap, x, arm):
        p = self.phi_Y
        return (p[:, 0] + p[:, 1] * gap + p[:, 2] * x + arm * (p[:, 3] + p[:, 4] * x + p[:, 5] * gap))

    def history_outcome_lin(self, history: History) -> tuple[np.ndarray, np.ndarray]:
        """Per-visit outcome linear predictors (without frailty) and outcome
        values for conditioning: (size, k) and (k,)."""
        k = history.stage
        lin = np.empty((self.size, k))
        for j in range(1, k + 1):
            if j == 1:
                feats = outcome_features(0.0, 0.0, 0.0, first=True)
            else:
                gap = history.visit_times[j - 1] - history.visit_times[j - 2]
                feats = outcome_features(gap, history.covariates[j - 1], history.treatments[j - 2])
            lin[:, j - 1] = self.phi_Y @ feats
        return lin, history.outcomes.astype(float)


# ---------------------------------------------------------------------------
# conditional random-effect sampling


def _mh_scan(prop, scores, log_u, warmup, n_keep):
    """Independence-MH scan: accept prop[s] when log_u[s] <= scores[s] - current.

    ``prop``/``scores``/``log_u`` are (warmup + n_keep, E); returns the last
    n_keep states, (n_keep, E).
    """
    S, E = prop.shape
    out = np.empty((n_keep, E))
    if E == 1:
        pr = prop[:, 0].tolist()
        sc = scores[:, 0].tolist()
        lu = log_u[:, 0].tolist()
        cur, cur_sc = pr[0], sc[0]
        o = out[:, 0]
        idx = 0
        for s in range(S):
            if s and lu[s] <= sc[s] - cur_sc:
                cur, cur_sc = pr[s], sc[s]
            if s >= warmup:
                o[idx] = cur
                idx += 1
        return out
    cur = prop[0].copy()
    cur_sc = scores[0].copy()
    idx = 0
    for s in range(S):
        if s:
            acc = log_u[s] <= scores[s] - cur_sc
            cur = np.where(acc, prop[s], cur)
            cur_sc = np.where(acc, scores[s], cur_sc)
        if s >= warmup:
            out[idx] = cur
            idx += 1
    return out


def _uw_chain(lin_base, y_vals, sigma_ww, R, rng, warmup, acceptance):
    """Draws of the outcome frailty given pseudo-history terms.

    ``lin_base`` is (E, k) linear predictors without the frailty, ``y_vals``
    (E, k) possibly fractional outcomes; returns (R, E).  The prior score is
    computed from the standardized proposal draws, which stays well defined
    for a degenerate (zero-variance) prior.
    """
    E, k = lin_base.shape
    S = warmup + R
    z = rng.standard_normal((S, E))
    prop = np.sqrt(sigma_ww) * z
    scores = np.zeros((S, E))
    for j in range(k):
        scores += bernoulli_probit_loglik(y_vals[:, j], lin_base[:, j] + prop)
    if acceptance == "uncorrected":
        scores -= 0.5 * z ** 2
    log_u = np.log(rng.random((S, E)))
    return _mh_scan(prop, scores, log_u, warmup, R)


def re_posterior_log_ratio(u_prime, u_curr, history: History, params: JointParams) -> float:
    """Log ratio of the conditional random-effect density at two states:
    the per-visit mark log-densities plus the prior log-density, with the
    intractable normalizer cancelling."""
    up = np.asarray(getattr(u_prime, "as_array", lambda: u_prime)(), dtype=float)
    uc = np.asarray(getattr(u_curr, "as_array", lambda: u_curr)(), dtype=float)
    fam = ProbitGaussianFamily.from_params(params)
    lin, y = fam.history_outcome_lin(history)
    total = 0.0
    for j in range(history.stage):
        total += float(bernoulli_probit_loglik(y[j], lin[0, j] + up[1])
                       - bernoulli_probit_loglik(y[j], lin[0, j] + uc[1]))
        # covariate terms do not involve the frailty and cancel exactly
    total += mvn_logpdf(up, params.Sigma) - mvn_logpdf(uc, params.Sigma)
    return total


def sample_re_conditional(history: History, params: JointParams, R: int,
                          rng: np.random.Generator, warmup: int = 100,
                          acceptance: str = "corrected") -> np.ndarray:
    """R post-warmup draws of the full effect triple (u_T, u_W, u_A) from an
    independence-Metropolis chain conditioned on the history's marks.

    With ``corrected`` acceptance the prior proposal cancels and the chain
    targets the exact conditional (the prior itself for an empty history).
    ``uncorrected`` keeps the prior ratio in the acceptance, which is the
    convention reward evaluation uses; see the module docstring.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    if acceptance not in ("uncorrected", "corrected"):
        raise ValueError(f"unknown acceptance mode {acceptance!r}")
    S = warmup + R
    z = rng.standard_normal((S, 3))
    prop = z @ sigma_factor(params.Sigma).T
    fam = ProbitGaussianFamily.from_params(params)
    lin, y = fam.history_outcome_lin(history)
    scores = np.zeros(S)
    for j in range(history.stage):
        scores += bernoulli_probit_loglik(y[j], lin[0, j] + prop[:, 1])
    if acceptance == "uncorrected":
        # prior log-density up to a constant, via the standardized draws
        scores += -0.5 * np.sum(z * z, axis=1)
    log_u = np.log(rng.random(S))
    out = np.empty((R, 3))
    cur, cur_sc = prop[0], scores[0]
    idx = 0
    for s in range(S):
        if s and log_u[s] <= scores[s] - cur_sc:
            cur, cur_sc = prop[s], scores[s]
        if s >= warmup:
            out[idx] = cur
            idx += 1
    return out


# ---------------------------------------------------------------------------
# rollout engine


@dataclass
class _EvalContext:
    family: ProbitGaussianFamily
    times: np.ndarray      # future visit times t_{k+1}..t_{K+1}
    gamma: np.ndarray
    cap_total: int | None
    R: int
    seed: int
    config: GcompConfig


@dataclass
class _NodeState:
    t_last: float
    x_last: np.ndarray        # (E,) collapsed, or (R, E) in branch mode
    treat_count: np.ndarray   # (E,)
    lin_base: np.ndarray      # (E, k) pseudo-history outcome predictors
    y_vals: np.ndarray        # (E, k)
    u: np.ndarray | None = None  # (R, E) root chain draws in branch mode


@dataclass
class _NodeResult:
    value: np.ndarray   # (E,)
    se2: np.ndarray     # (E,)
    course: np.ndarray  # (E, n_remaining_stages)


def _node_rngs(ctx: _EvalContext, path: tuple[int, ...]):
    code = 1
    for a in path:
        code = 2 * code + a
    return (substream(ctx.seed, "re_chain", len(path), code),
            substream(ctx.seed, "rollout", len(path), code))


def _arm_expansions(ctx: _EvalContext, state: _NodeState, depth: int,
                    path: tuple[int, ...]) -> dict[int, tuple]:
    """Expand every arm at this node: {arm: (value, se2, course, feasible)}."""
    E = state.treat_count.shape[0]
    rng_chain, rng_marks = _node_rngs(ctx, path)
    if ctx.config.branch_per_rollout:
        u = state.u
    else:
        u = _uw_chain(state.lin_base, state.y_vals, ctx.family.sigma_ww,
                      ctx.R, rng_chain, ctx.config.warmup, ctx.config.acceptance)
    gap = ctx.times[depth] - state.t_last
    gamma_j = ctx.gamma[depth]
    last_stage = depth + 1 >= len(ctx.times)

    arm_results = {}
    for arm in (0, 1):
        feasible = np.ones(E, dtype=bool)
        if arm == 1 and ctx.cap_total is not None:
            feasible = state.treat_count < ctx.cap_total
            if not feasible.any():
                continue
        x_next = ctx.family.sample_covariate(state.x_last, arm, rng_marks, ctx.R)
        lin = ctx.family.outcome_lin(gap, x_next, arm) + u
        y_next = (rng_marks.random((ctx.R, E)) < probit_prob(lin)).astype(float)
        ybar = y_next.mean(axis=0)
        imm = gamma_j * ybar
        se2 = gamma_j ** 2 * y_next.var(axis=0) / ctx.R
        if last_stage:
            arm_results[arm] = (imm, se2, np.full((E, 1), arm, dtype=np.int64), feasible)
            continue
        if ctx.config.branch_per_rollout:
            child_state = _NodeState(
                t_last=float(ctx.times[depth]), x_last=x_next,
                treat_count=state.treat_count + arm,
                lin_base=state.lin_base, y_vals=state.y_vals, u=u)
        else:
            xbar = x_next.mean(axis=0)
            child_state = _NodeState(
                t_last=float(ctx.times[depth]), x_last=xbar,
                treat_count=state.treat_count + arm,
                lin_base=np.concatenate(
                    [state.lin_base, ctx.family.outcome_lin(gap, xbar, arm)[:, None]], axis=1),
                y_vals=np.concatenate([state.y_vals, ybar[:, None]], axis=1))
        child = _select_best(_arm_expansions(ctx, child_state, depth + 1, path + (arm,)))
        course = np.concatenate([np.full((E, 1), arm, dtype=np.int64), child.course], axis=1)
        arm_results[arm] = (imm + child.value, se2 + child.se2, course, feasible)

    if not arm_results:
        raise ValueError("empty feasible set at a decision stage")
    return arm_results


def _select_best(arm_results: dict[int, tuple]) -> _NodeResult:
    """Per-unit argmax over arms; ties and infeasible arms go to arm 0."""
    if len(arm_results) == 1:
        value, se2, course, _ = next(iter(arm_results.values()))
        return _NodeResult(value, se2, course)
    v0, s0, c0, _ = arm_results[0]
    v1, s1, c1, feas1 = arm_results[1]
    v1 = np.where(feas1, v1, -np.inf)
    choose1 = v1 > v0
    value = np.where(choose1, v1, v0)
    se2 = np.where(choose1, s1, s0)
    course = np.where(choose1[:, None], c1, c0)
    return _NodeResult(value, se2, course)


def _select_pinned(arm_results: dict[int, tuple], pin: int) -> _NodeResult:
    if pin not in arm_results:
        raise ValueError(f"pinned first action {pin} infeasible")
    value, se2, course, feasible = arm_results[pin]
    if pin == 1 and not feasible.all():
        raise ValueError("pinned first action infeasible for some evaluation units")
    return _NodeResult(value, se2, course)


def _root_state(history: History, family: ProbitGaussianFamily) -> _NodeState:
    E = family.size
    lin, y = family.history_outcome_lin(history)
    return _NodeState(
        t_last=float(history.visit_times[-1]),
        x_last=np.full(E, history.covariates[-1]),
        treat_count=np.full(E, float(history.treatments.sum())),
        lin_base=lin, y_vals=np.broadcast_to(y, (E, history.stage)).copy())


def _check_regime(history: History, regime: Regime):
    if history.stage < 1:
        raise ValueError("reward evaluation needs a history with at least one visit")
    if regime.future_times[0] <= history.visit_times[-1]:
        raise ValueError("future times must follow the history's last visit")


def _root_expansions(history, regime, family, R, seed, config):
    """One tree traversal: root-arm values with optimal continuations."""
    ctx = _EvalContext(family=family, times=np.asarray(regime.future_times, dtype=float),
                       gamma=regime.weights(), cap_total=regime.feasible.cap_total,
                       R=R, seed=seed, config=config)
    state = _root_state(history, family)
    if config.branch_per_rollout:
        rng_chain, _ = _node_rngs(ctx, ())
        state.u = _uw_chain(state.lin_base, state.y_vals, family.sigma_ww,
                            R, rng_chain, config.warmup, config.acceptance)
        state.x_last = np.broadcast_to(state.x_last, (R, family.size)).copy()
    return _arm_expansions(ctx, state, 0, ())


def reward_optimal(history: History, regime: Regime, params: JointParams, R: int,
                   rng: np.random.Generator, config: GcompConfig = DEFAULT_CONFIG,
                   pin_first: int | None = None, family=None) -> tuple[OptimalPlan, RewardEstimate]:
    """Backwards-induction value of the optimal regime from this history.

    ``pin_first`` fixes the first decision (used by the benefit estimand)
    while later stages stay optimal.  ``family`` swaps in an alternative
    mark model exposing the ProbitGaussianFamily interface.
    """
    _check_regime(history, regime)
    if not regime.is_optimal:
        raise ValueError("reward_optimal needs an optimal regime; use reward_fixed")
    if R < 1:
        raise ValueError("R must be at least 1")
    seed = int(rng.integers(2 ** 63 - 1))
    if family is None:
        family = ProbitGaussianFamily.from_params(params)
    arm_res = _root_expansions(history, regime, family, R, seed, config)
    res = _select_best(arm_res) if pin_first is None else _select_pinned(arm_res, pin_first)
    course = tuple(int(a) for a in res.course[0])
    plan = OptimalPlan(first_action=int(course[0]), course=course,
                       arm_values={a: float(v[0][0]) for a, v in arm_res.items()})
    est = RewardEstimate(value=float(res.value[0]), mc_std_error=float(np.sqrt(res.se2[0])),
                         R=R, per_arm=plan.arm_values)
    return plan, est


def reward_fixed(history: History, regime: Regime, params: JointParams, R: int,
                 rng: np.random.Generator, config: GcompConfig = DEFAULT_CONFIG,
                 family=None) -> RewardEstimate:
    """Monte Carlo value of a fixed treatment sequence: one conditional
    frailty draw per rollout, marks simulated forward at the given times."""
    _check_regime(history, regime)
    if regime.is_optimal:
        raise ValueError("reward_fixed needs a fixed regime; use reward_optimal")
    if R < 1:
        raise ValueError("R must be at least 1")
    count = int(history.treatments.sum())
    for arm in regime.fixed:
        if arm not in regime.feasible.arms(count):
            raise ValueError(f"fixed treatment {arm} infeasible given {count} prior treatments")
        count += arm
    seed = int(rng.integers(2 ** 63 - 1))
    if family is None:
        family = ProbitGaussianFamily.from_params(params)
    value, se, _ = _fixed_batch(history, regime, family, R, seed, config)
    return RewardEstimate(value=float(value[0]), mc_std_error=float(se[0]), R=R)


def _fixed_batch(history, regime, family, R, seed, config):
    state = _root_state(history, family)
    rng_chain = substream(seed, "re_chain", 0, 1)
    rng_marks = substream(seed, "rollout", 0, 1)
    u = _uw_chain(state.lin_base, state.y_vals, family.sigma_ww,
                  R, rng_chain, config.warmup, config.acceptance)
    gamma = regime.weights()
    x = np.broadcast_to(state.x_last, (R, family.size)).copy()
    t_last = state.t_last
    total = np.zeros((R, family.size))
    for j, t_next in enumerate(regime.future_times):
        arm = regime.fixed[j]
        gap = t_next - t_last
        x = family.sample_covariate(x, arm, rng_marks, R)
        lin = family.outcome_lin(gap, x, arm) + u
        y = (rng_marks.random((R, family.size)) < probit_prob(lin)).astype(float)
        total += gamma[j] * y
        t_last = t_next
    value = total.mean(axis=0)
    se = total.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(family.size)
    return value, se, total


def posterior_reward(history: History, regime: Regime, draws, R: int,
                     rng: np.random.Generator, config: GcompConfig = DEFAULT_CONFIG,
                     pin_first: int | None = None) -> PosteriorRewardResult:
    """Reward at every posterior parameter draw, evaluated jointly.

    ``draws`` is a sequence of JointParams or any object exposing
    ``to_param_list()``.  Per-draw values use shared rollout streams, so
    the evaluation is deterministic given the generator state.
    """
    params = draws.to_param_list() if hasattr(draws, "to_param_list") else list(draws)
    if not params:
        raise ValueError("no posterior draws supplied")
    _check_regime(history, regime)
    seed = int(rng.integers(2 ** 63 - 1))
    family = ProbitGaussianFamily.from_param_list(params)
    if regime.is_optimal:
        arm_res = _root_expansions(history, regime, family, R, seed, config)
        res = _select_best(arm_res) if pin_first is None else _select_pinned(arm_res, pin_first)
        values, se2 = res.value, res.se2
        courses = res.course
        uniq, counts = np.unique(courses, axis=0, return_counts=True)
        freq = {tuple(int(a) for a in row): float(c) / len(params)
                for row, c in zip(uniq, counts)}
        arm_means = {a: float(np.where(v[3], v[0], np.nan).mean()) for a, v in arm_res.items()}
        return PosteriorRewardResult(values=values, within_se=np.sqrt(se2),
                                     mean=float(values.mean()), courses=courses,
                                     course_frequencies=freq, arm_means=arm_means)
    value, se, _ = _fixed_batch(history, regime, family, R, seed, config)
    return PosteriorRewardResult(values=value, within_se=se, mean=float(value.mean()))
