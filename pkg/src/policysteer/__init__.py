"""Runtime policy steering with a latent world model and a narrating verifier."""

__version__ = "0.1.0"

from .aggregate import TimeSeriesKMeans, cluster_plans, dtw_distance
from .config import RunConfig
from .data import DatasetConfig, generate_dataset
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    PolicySteerError,
    SteeringError,
    TrainingError,
    VerifierError,
)
from .narration import BehaviorFeatures, Narration
from .policy import ModeMixturePolicy, fit_policy, sample_plans
from .steering import SteeringConfig, run_episode, run_steering, steer_once
from .verifier import OracleVerifier, TaskSpec, get_task
from .worldmodel import RSSMWorldModel, WorldModelConfig, train_world_model

__all__ = [
    "BehaviorFeatures",
    "CheckpointError",
    "ConfigurationError",
    "DatasetConfig",
    "ModeMixturePolicy",
    "Narration",
    "OracleVerifier",
    "PolicySteerError",
    "RSSMWorldModel",
    "RunConfig",
    "SteeringConfig",
    "SteeringError",
    "TaskSpec",
    "TimeSeriesKMeans",
    "TrainingError",
    "VerifierError",
    "WorldModelConfig",
    "cluster_plans",
    "dtw_distance",
    "fit_policy",
    "generate_dataset",
    "get_task",
    "run_episode",
    "run_steering",
    "sample_plans",
    "steer_once",
    "train_world_model",
]
