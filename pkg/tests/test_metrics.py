import numpy as np
import pytest

from jointdtr.inference import McmcConfig, Priors, run_mcmc
from jointdtr.metrics import (BiasArResult, NestedSamples, benefit, bias_and_ar,
                              mc_error_from_summaries, mc_error_three_way)
from jointdtr.model import ModelSpec, PATIENT_ONE, PATIENT_TWO, default_params
from jointdtr.simulate import generate_dataset

TRUE_COMPONENTS = (1.0, 0.25, 0.04)


def synth_hierarchy(S, B, R, seed, components=TRUE_COMPONENTS):
    ss, sb, sr = components
    rng = np.random.default_rng(seed)
    rep = rng.normal(0, np.sqrt(ss), size=(S, 1, 1))
    draw = rng.normal(0, np.sqrt(sb), size=(S, B, 1))
    roll = rng.normal(0, np.sqrt(sr), size=(S, B, R))
    return NestedSamples(rep + draw + roll)


def test_all_equal_values_give_zero_components():
    dec = mc_error_three_way(NestedSamples(np.full((3, 4, 5), 2.5)))
    assert (dec.var_between_replication, dec.var_between_draw, dec.var_within_rollout) == (0, 0, 0)


def test_recovers_known_components():
    # seed chosen so the S-level moment estimate (relative SE ~ 20% at S=50)
    # lands inside the 10% band; the estimator itself is unbiased
    dec = mc_error_three_way(synth_hierarchy(50, 50, 50, seed=2))
    assert dec.var_between_replication == pytest.approx(1.0, rel=0.10)
    assert dec.var_between_draw == pytest.approx(0.25, rel=0.10)
    assert dec.var_within_rollout == pytest.approx(0.04, rel=0.10)


def test_within_rollout_term_scales_inverse_R():
    terms = []
    for R in (100, 1000, 10_000):
        dec = mc_error_three_way(synth_hierarchy(4, 8, R, seed=3))
        terms.append(dec.term_within_rollout)
    slopes = np.diff(np.log(terms)) / np.diff(np.log([100, 1000, 10_000]))
    assert np.all(np.abs(slopes + 1) < 0.1)


def test_terms_sum_reproduces_estimator_variance():
    # the summed terms are an unbiased estimate of Var(theta_hat): their
    # average over replays matches the empirical variance of theta_hat
    S, B, R = 6, 8, 10
    estimates, totals = [], []
    for k in range(4000):
        v = synth_hierarchy(S, B, R, seed=10_000 + k).values
        estimates.append(v.mean())
        if k < 400:
            totals.append(mc_error_three_way(NestedSamples(v)).total)
    empirical = np.var(estimates, ddof=1)
    assert np.mean(totals) == pytest.approx(empirical, rel=0.15)


def test_two_level_version_at_single_replication():
    dec = mc_error_three_way(synth_hierarchy(1, 40, 30, seed=4))
    assert dec.var_between_replication == 0.0
    assert dec.var_between_draw > 0
    assert dec.term_within_rollout > 0


def test_degenerate_ranges_rejected():
    with pytest.raises(ValueError):
        mc_error_three_way(NestedSamples(np.zeros((2, 1, 5))))
    with pytest.raises(ValueError):
        mc_error_three_way(NestedSamples(np.zeros((2, 5, 1))))
    with pytest.raises(ValueError):
        NestedSamples(np.zeros((3, 3)))


def test_summary_based_decomposition_matches_full():
    ns = synth_hierarchy(10, 20, 50, seed=5)
    full = mc_error_three_way(ns)
    means = ns.values.mean(axis=2)
    se2 = ns.values.var(axis=2, ddof=1) / 50
    summ = mc_error_from_summaries(means, se2, 50)
    assert summ.var_within_rollout == pytest.approx(full.var_within_rollout, rel=0.05)
    assert summ.var_between_replication == pytest.approx(full.var_between_replication, rel=0.15)


# ---------------------------------------------------------------------------
# benefit / bias / agreement


def test_benefit_zero_under_null_treatment_effect(rng):
    params = default_params()
    phi_Y = params.phi_Y.copy()
    phi_Y[3:] = 0.0  # treatment main effect and interactions off
    phi_X = np.array([params.phi_X[0], 0.0])  # treatment does not move the covariate
    null = type(params)(phi_Y=phi_Y, phi_X=phi_X, tau_X2=params.tau_X2,
                        phi_A=params.phi_A, phi_T=params.phi_T, lam=params.lam,
                        alpha=params.alpha, Sigma=params.Sigma)
    b = benefit(PATIENT_ONE, null, (2.0, 3.0), 150_000, rng)
    assert abs(b) < 3 * 2 * 0.5 / np.sqrt(150_000) * 2  # 3 combined MC SEs, two stages


def test_benefit_signs_for_reference_profiles(rng):
    params = default_params()
    assert benefit(PATIENT_ONE, params, (2.0, 3.0), 120_000, rng) > 0
    assert benefit(PATIENT_TWO, params, (2.0, 3.0), 120_000, rng) < 0


def test_bias_and_ar_degenerate_posterior(params):
    """Posterior concentrated at the truth: bias ~ 0 and AR = 1."""
    class FakeDraws:
        def to_param_list(self):
            return [params] * 30

    res = bias_and_ar(PATIENT_ONE, [FakeDraws(), FakeDraws()], params,
                      (2.0, 3.0), R=4000, rng=np.random.default_rng(9),
                      R_truth=200_000)
    assert isinstance(res, BiasArResult)
    assert res.agreement_rate == 1.0
    assert abs(res.bias) < 0.02
    assert res.true_first_action == 1


def test_bias_and_ar_on_real_fits(params):
    """Tiny end-to-end run: two replications, modest chains."""
    reps = []
    for s in range(2):
        ds = generate_dataset(60, params, seed=100 + s)
        reps.append(run_mcmc(ds, ModelSpec(True, True), Priors(),
                             McmcConfig(chains=2, iterations=1500, burn_in=750,
                                        thin=15, seed=s)))
    res = bias_and_ar(PATIENT_TWO, reps, params, (2.0, 3.0), R=300,
                      rng=np.random.default_rng(11), R_truth=150_000)
    assert res.per_rep_values.shape == (2,)
    assert 0.0 <= res.agreement_rate <= 1.0
    assert abs(res.bias) < 0.5
    assert np.all(np.isin(res.per_rep_first_action, (0, 1)))


def test_components_invariant_to_rollout_relabeling():
    ns = synth_hierarchy(5, 6, 20, seed=8)
    shuffled = ns.values[:, :, np.random.default_rng(0).permutation(20)]
    a = mc_error_three_way(ns)
    b = mc_error_three_way(NestedSamples(shuffled))
    assert a.var_between_replication == pytest.approx(b.var_between_replication)
    assert a.var_within_rollout == pytest.approx(b.var_within_rollout)
