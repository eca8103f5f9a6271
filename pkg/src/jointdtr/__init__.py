"""Bayesian joint modeling and G-computation for dynamic treatment regimes
observed at irregular visit times."""

__version__ = "0.1.0"

from .model import (FeasibleSet, History, JointParams, ModelSpec, PatientPath,
                    RandomEffects, Regime, default_params)
from .simulate import Dataset, generate_dataset, generate_individual, generate_test_history
from .inference import McmcConfig, PosteriorDraws, Priors, joint_log_posterior, run_mcmc
from .diagnostics import diagnostics, ess, split_rhat
from .gcomp import (GcompConfig, OptimalPlan, RewardEstimate, posterior_reward,
                    reward_fixed, reward_optimal, sample_re_conditional)
from .metrics import NestedSamples, benefit, bias_and_ar, mc_error_three_way
from .study import StudyConfig, run_study, export_report

__all__ = [
    "FeasibleSet", "History", "JointParams", "ModelSpec", "PatientPath",
    "RandomEffects", "Regime", "default_params",
    "Dataset", "generate_dataset", "generate_individual", "generate_test_history",
    "McmcConfig", "PosteriorDraws", "Priors", "joint_log_posterior", "run_mcmc",
    "diagnostics", "ess", "split_rhat",
    "GcompConfig", "OptimalPlan", "RewardEstimate", "posterior_reward",
    "reward_fixed", "reward_optimal", "sample_re_conditional",
    "NestedSamples", "benefit", "bias_and_ar", "mc_error_three_way",
    "StudyConfig", "run_study", "export_report",
    "__version__",
]
