"""Narration, selection and monitoring backends."""

from ..narration import (
    GRAMMAR,
    BehaviorFeatures,
    FeatureConfig,
    Narration,
    all_feature_tuples,
    extract_features,
    parse,
    render,
)
from .classifier import LatentClassifier, rollout_features, train_latent_classifier
from .client import ClientVerifier, VerifierClient
from .oracle import (
    FORBID_PENALTY,
    CandidateScore,
    MonitorResult,
    OracleVerifier,
    Verdict,
    monitor_features,
    score_features,
    select_features,
)
from .tasks import BUILTIN_TASKS, Predicate, TaskSpec, get_task

__all__ = [
    "BUILTIN_TASKS",
    "BehaviorFeatures",
    "CandidateScore",
    "ClientVerifier",
    "FORBID_PENALTY",
    "FeatureConfig",
    "GRAMMAR",
    "LatentClassifier",
    "MonitorResult",
    "Narration",
    "OracleVerifier",
    "Predicate",
    "TaskSpec",
    "Verdict",
    "VerifierClient",
    "all_feature_tuples",
    "extract_features",
    "get_task",
    "monitor_features",
    "parse",
    "render",
    "rollout_features",
    "score_features",
    "select_features",
    "train_latent_classifier",
]
