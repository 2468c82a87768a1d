"""Virtual-space reinforcement learning control of a fed-batch reactor."""

from .reactor import KineticsParams, ReactorState, Trajectory, simulate
from .mdp import RewardTable, encode_state
from .surrogate import VirtualSpace, RecurrentModel, TrainingConfig
from .agents import (
    CombinedPolicy,
    QTable,
    RVLConfig,
    SightPolicy,
    combine_policies,
    evaluate_policy,
    train_q_learning,
    train_rvl,
    train_sights,
    train_smsa,
)
from .config import ExperimentConfig, load_config

__all__ = [
    "KineticsParams",
    "ReactorState",
    "Trajectory",
    "simulate",
    "RewardTable",
    "encode_state",
    "VirtualSpace",
    "RecurrentModel",
    "TrainingConfig",
    "CombinedPolicy",
    "QTable",
    "RVLConfig",
    "SightPolicy",
    "combine_policies",
    "evaluate_policy",
    "train_q_learning",
    "train_rvl",
    "train_sights",
    "train_smsa",
    "ExperimentConfig",
    "load_config",
]

__version__ = "0.1.0"
