"""Contextual linear bandits under herding-biased user feedback."""

from .env import (
    ArmContext,
    DecisionRecord,
    Environment,
    Feedback,
    History,
    HistoryPolicy,
    ModelParams,
    emit_feedback,
    expected_reward,
    update_history,
)
from .harness import (
    ExperimentConfig,
    RegretTrace,
    instantaneous_regret,
    run_single,
    run_suite,
)
from .policies import (
    GaussianTSPolicy,
    LinUCBConfPolicy,
    LinUCBPolicy,
    OraclePolicy,
    Policy,
    PolicySpec,
    TSConfMCMCPolicy,
    TSConfPolicy,
    UniformRandomPolicy,
)
from .posterior_exact import GaussianPosterior, augmented_feature, recover_params
from .posterior_gibbs import GibbsConfig, GibbsState, HistoryStats, run_chain

__version__ = "0.1.0"

__all__ = [
    "ArmContext",
    "DecisionRecord",
    "Environment",
    "ExperimentConfig",
    "Feedback",
    "GaussianPosterior",
    "GaussianTSPolicy",
    "GibbsConfig",
    "GibbsState",
    "History",
    "HistoryPolicy",
    "HistoryStats",
    "LinUCBConfPolicy",
    "LinUCBPolicy",
    "ModelParams",
    "OraclePolicy",
    "Policy",
    "PolicySpec",
    "RegretTrace",
    "TSConfMCMCPolicy",
    "TSConfPolicy",
    "UniformRandomPolicy",
    "augmented_feature",
    "emit_feedback",
    "expected_reward",
    "instantaneous_regret",
    "recover_params",
    "run_chain",
    "run_single",
    "run_suite",
    "update_history",
]
