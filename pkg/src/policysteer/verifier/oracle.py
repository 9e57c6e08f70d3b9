"""Rule-based verifier: narrate decoded rollouts, select and monitor against a task."""

from dataclasses import asdict, dataclass

import numpy as np

from ..exceptions import ConfigurationError
from ..narration import FeatureConfig, Narration, extract_features
from ..worldmodel.model import decode_many

FORBID_PENALTY = 1e6


@dataclass(frozen=True)
class CandidateScore:
    score: float
    ok: bool
    rationale: str


@dataclass(frozen=True)
class Verdict:
    chosen_index: int
    per_candidate: tuple

    @property
    def abstain(self):
        """Every candidate fires a forbid predicate."""
        return not any(c.ok for c in self.per_candidate)

    def to_dict(self):
        return {"chosen_index": self.chosen_index, "per_candidate": [asdict(c) for c in self.per_candidate]}


@dataclass(frozen=True)
class MonitorResult:
    ok: bool
    rationale: str


def _penalty(task):
    # stays above any attainable preference total, so forbids dominate at every weight scale
    return FORBID_PENALTY * max(1.0, sum(p.weight for p in task.prefer))


def score_features(features, task):
    prefs = task.satisfied_prefers(features)
    fired = task.fired_forbids(features)
    score = sum(p.weight for p in prefs) - _penalty(task) * len(fired)
    parts = []
    if prefs:
        parts.append("prefers " + ", ".join(p.describe() for p in prefs))
    if fired:
        parts.append("forbidden: " + ", ".join(p.describe() for p in fired))
    return CandidateScore(float(score), not fired, "; ".join(parts) or "no predicate applies")


def check_candidates(narrations, max_k=None):
    if not narrations:
        raise ConfigurationError("select needs at least one narration")
    if max_k is not None and len(narrations) > max_k:
        raise ConfigurationError(f"select takes at most {max_k} narrations, got {len(narrations)}")


def select_features(features_list, task):
    """Verdict over feature tuples; the first maximal score wins."""
    scores = tuple(score_features(f, task) for f in features_list)
    chosen = int(np.argmax([s.score for s in scores]))
    return Verdict(chosen, scores)


def monitor_features(features, task):
    fired = task.fired_forbids(features)
    if fired:
        return MonitorResult(False, "forbidden: " + ", ".join(p.describe() for p in fired))
    if not features.grasp_succeeded:
        return MonitorResult(False, "grasp fails")
    return MonitorResult(True, "no forbidden behavior predicted")


class OracleVerifier:
    """Deterministic stand-in for the narrating and selecting language model."""

    name = "oracle"

    def __init__(self, feature_config=None, max_k=None):
        self.feature_config = feature_config or FeatureConfig()
        self.max_k = max_k

    def narrate_frames(self, frames):
        return Narration.from_features(extract_features(frames, self.feature_config))

    def narrate(self, rollout, params):
        return self.narrate_frames(decode_many(params, rollout.downsampled))

    def narrate_many(self, rollouts, params):
        return [self.narrate(r, params) for r in rollouts]

    def select(self, narrations, task):
        check_candidates(narrations, self.max_k)
        return select_features([n.features for n in narrations], task)

    def monitor(self, narration, task):
        return monitor_features(narration.features, task)
