"""Study-level estimands and nested Monte Carlo error decompositions.

The reward estimator averages over three sampling layers: simulation
replications s, posterior draws b within a replication, and Monte Carlo
rollouts r within a draw.  Its variance splits into a between-replication
term, a between-draw term shrinking as 1/B, and a within-rollout term
shrinking as 1/R; the decomposition below estimates the three terms by
nested method-of-moments (ANOVA), truncating negative solutions at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gcomp import GcompConfig, DEFAULT_CONFIG, posterior_reward, reward_optimal
from .model import History, JointParams, Regime


@dataclass
class NestedSamples:
    """Rectangular draws theta[s, b, r] (replication, posterior draw, rollout)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("values must be (S, B, R)")


@dataclass
class McErrorDecomposition:
    """Variance components and their contributions to Var(theta_hat)."""

    var_between_replication: float
    var_between_draw: float
    var_within_rollout: float
    S: int
    B: int
    R: int

    @property
    def term_between_replication(self) -> float:
        return self.var_between_replication / self.S

    @property
    def term_between_draw(self) -> float:
        return self.var_between_draw / (self.S * self.B)

    @property
    def term_within_rollout(self) -> float:
        return self.var_within_rollout / (self.S * self.B * self.R)

    @property
    def total(self) -> float:
        return (self.term_between_replication + self.term_between_draw
                + self.term_within_rollout)


def mc_error_three_way(samples: NestedSamples) -> McErrorDecomposition:
    """Method-of-moments estimates of the three variance layers.

    With S = 1 the between-replication component is zero and the result is
    the two-level (draw/rollout) decomposition.
    """
    v = samples.values
    S, B, R = v.shape
    if B < 2 or R < 2 or S < 1:
        raise ValueError("need S >= 1, B >= 2, R >= 2")
    draw_means = v.mean(axis=2)            # (S, B)
    rep_means = draw_means.mean(axis=1)    # (S,)
    ms_within = float(((v - draw_means[..., None]) ** 2).sum() / (S * B * (R - 1)))
    ms_draw = float(R * ((draw_means - rep_means[:, None]) ** 2).sum() / (S * (B - 1)))
    sig_r = ms_within
    sig_b = max(0.0, (ms_draw - ms_within) / R)
    if S > 1:
        ms_rep = float(B * R * ((rep_means - rep_means.mean()) ** 2).sum() / (S - 1))
        sig_s = max(0.0, (ms_rep - ms_draw) / (B * R))
    else:
        sig_s = 0.0
    return McErrorDecomposition(sig_s, sig_b, sig_r, S, B, R)


def mc_error_from_rep_stats(rep_means, rep_draw_vars, rep_mean_se2,
                            B: int, R: int) -> McErrorDecomposition:
    """Decomposition from per-replication sufficient statistics: the mean
    over draws, the variance across draws, and the mean squared per-draw
    Monte Carlo standard error."""
    rep_means = np.asarray(rep_means, dtype=float)
    S = len(rep_means)
    sig_r = float(np.mean(rep_mean_se2)) * R
    sig_b = max(0.0, float(np.mean(rep_draw_vars)) - sig_r / R)
    if S > 1:
        sig_s = max(0.0, float(rep_means.var(ddof=1)) - sig_b / B - sig_r / (B * R))
    else:
        sig_s = 0.0
    return McErrorDecomposition(sig_s, sig_b, sig_r, S, B, R)


def mc_error_from_summaries(rep_draw_means: np.ndarray, rep_draw_se2: np.ndarray,
                            R: int) -> McErrorDecomposition:
    """Same decomposition from per-(replication, draw) summary statistics:
    the draw-level reward means and their squared Monte Carlo standard
    errors (variance of each per-draw mean, i.e. per-rollout variance / R)."""
    means = np.atleast_2d(rep_draw_means)
    se2 = np.atleast_2d(rep_draw_se2)
    S, B = means.shape
    sig_r = float(se2.mean()) * R
    sig_b = max(0.0, float(means.var(axis=1, ddof=1).mean()) - sig_r / R)
    if S > 1:
        rep_means = means.mean(axis=1)
        sig_s = max(0.0, float(rep_means.var(ddof=1)) - sig_b / B - sig_r / (B * R))
    else:
        sig_s = 0.0
    return McErrorDecomposition(sig_s, sig_b, sig_r, S, B, R)


def benefit(test_history: History, params_true: JointParams, times: tuple[float, ...],
            R: int, rng: np.random.Generator, gamma: tuple[float, ...] | None = None,
            config: GcompConfig = DEFAULT_CONFIG) -> float:
    """Reward difference between pinning the first action to 1 versus 0,
    with optimal continuations, at the true parameters."""
    regime = Regime(future_times=tuple(times), gamma=gamma)
    _, r1 = reward_optimal(test_history, regime, params_true, R, rng, config, pin_first=1)
    _, r0 = reward_optimal(test_history, regime, params_true, R, rng, config, pin_first=0)
    return r1.value - r0.value


@dataclass
class BiasArResult:
    bias: float
    agreement_rate: float
    per_rep_values: np.ndarray       # posterior-mean estimated-optimal reward per replication
    per_rep_first_action: np.ndarray
    true_value: float
    true_first_action: int

    @property
    def per_rep_bias(self) -> np.ndarray:
        return self.per_rep_values - self.true_value


def bias_and_ar(test_history: History, per_rep_draws: list, params_true: JointParams,
                times: tuple[float, ...], R: int, rng: np.random.Generator,
                R_truth: int | None = None, gamma: tuple[float, ...] | None = None,
                config: GcompConfig = DEFAULT_CONFIG) -> BiasArResult:
    """Bias of the posterior-mean optimal reward across replications, and the
    rate at which the recommended first action agrees with the truth.

    Per replication the estimated reward is the average over posterior draws
    of the per-draw optimal value; the recommended action maximizes the
    posterior-mean arm values.
    """
    if not per_rep_draws:
        raise ValueError("need at least one replication of posterior draws")
    regime = Regime(future_times=tuple(times), gamma=gamma)
    true_plan, true_est = reward_optimal(test_history, regime, params_true,
                                         R_truth or R, rng, config)
    values, actions = [], []
    for draws in per_rep_draws:
        res = posterior_reward(test_history, regime, draws, R, rng, config)
        rec = max(res.arm_means, key=lambda a: (res.arm_means[a], -a))
        values.append(res.mean)
        actions.append(rec)
    values = np.array(values)
    actions = np.array(actions)
    return BiasArResult(
        bias=float(values.mean() - true_est.value),
        agreement_rate=float((actions == true_plan.first_action).mean()),
        per_rep_values=values, per_rep_first_action=actions,
        true_value=true_est.value, true_first_action=true_plan.first_action)
