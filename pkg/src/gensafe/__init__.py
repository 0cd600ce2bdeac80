"""GenSafe: a ROMDP-based safety layer for safe reinforcement learning.

Example:
    from gensafe import ExperimentConfig, run_experiment

    config = ExperimentConfig.model_validate({"experiment": {"algorithm": "ppo-lag-gensafe", "epochs": 5}})
    summary = run_experiment(config)
"""
import logging

from gensafe.abstraction import ActionGrid, GmmClassifier, RomdpModel, build_romdp, fit_gmm
from gensafe.activation import ActivationMachine, ActivationState, update_activation
from gensafe.config import ExperimentConfig, load_config, load_configs
from gensafe.data import DataSample, Dataset
from gensafe.dimred import fit_normalizer, train_mapper, tsne
from gensafe.envs import make_env
from gensafe.models import load_romdp, save_romdp
from gensafe.planner import ReducedValueFunction, value_iteration
from gensafe.runtime import run_experiment
from gensafe.safety import CorrectionProblem, SafetyLayer, constraint_eval, correct_action, manage_dataset

logger = logging.getLogger(__name__)

__all__ = [
    "ActionGrid",
    "ActivationMachine",
    "ActivationState",
    "CorrectionProblem",
    "DataSample",
    "Dataset",
    "ExperimentConfig",
    "GmmClassifier",
    "ReducedValueFunction",
    "RomdpModel",
    "SafetyLayer",
    "build_romdp",
    "constraint_eval",
    "correct_action",
    "fit_gmm",
    "fit_normalizer",
    "load_config",
    "load_configs",
    "load_romdp",
    "make_env",
    "manage_dataset",
    "run_experiment",
    "save_romdp",
    "train_mapper",
    "tsne",
    "update_activation",
    "value_iteration",
]
