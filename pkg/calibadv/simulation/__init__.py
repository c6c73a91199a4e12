from .config import CostModel, Pipeline, SimConfig, load_sim_config
from .corpus import SyntheticCorpus, generate_corpus
from .environment import sample_group
from .experiment import ExperimentResult, expected_success, garbage_mass, run_experiment
from .policy import TabularPolicy, advantage_balance, batch_update, policy_update
from .sweep import run_ablation, run_lambda_sweep

__all__ = [
    "CostModel",
    "ExperimentResult",
    "Pipeline",
    "SimConfig",
    "SyntheticCorpus",
    "TabularPolicy",
    "advantage_balance",
    "batch_update",
    "expected_success",
    "garbage_mass",
    "generate_corpus",
    "load_sim_config",
    "policy_update",
    "run_ablation",
    "run_experiment",
    "run_lambda_sweep",
    "sample_group",
]
