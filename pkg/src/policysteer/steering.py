"""Closed-loop plan selection: sample, aggregate, imagine, narrate, select, execute.

``steer_once`` is the single steering decision. ``run_episode`` wraps it (or
a baseline) with environment execution and success labelling, and
``run_steering`` repeats that over seeded episodes and summarizes.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_observation, check_positive_int
from .aggregate import cluster_plans, nms_filter
from .env import PLAN_HORIZON, observe, reset, rollout
from .exceptions import ConfigurationError, SteeringError, VerifierError
from .narration import FeatureConfig, extract_features
from .policy import sample_plans
from .verifier.oracle import CandidateScore, OracleVerifier, Verdict, monitor_features
from .verifier.tasks import TaskSpec, get_task
from .worldmodel.model import decode_many, encode_init, imagine_batch

logger = logging.getLogger(__name__)

MODES = ("steer", "baseline", "classifier")


@dataclass(frozen=True)
class SteeringConfig:
    task: TaskSpec
    n_samples: int = 100
    k: int = 6
    plan_horizon: int = PLAN_HORIZON
    imagine_mode: str = "mean"
    backend: str = "oracle"
    mode_weight_override: dict = None
    temperature: float = 1.0
    max_iter: int = 20
    band: int = None
    nms_eps: float = None

    def __post_init__(self):
        object.__setattr__(self, "task", get_task(self.task))

    def validate(self, params=None):
        k = check_positive_int(self.k, "k")
        n = check_positive_int(self.n_samples, "n_samples")
        if n < k:
            raise ConfigurationError(f"n_samples ({n}) must be >= k ({k})")
        check_positive_int(self.plan_horizon, "plan_horizon")
        if self.imagine_mode not in ("mean", "sample"):
            raise ConfigurationError("imagine_mode must be 'mean' or 'sample'")
        if self.backend not in ("oracle", "client", "classifier"):
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        if not self.temperature > 0:
            raise ConfigurationError("temperature must be positive")
        return self

    def to_dict(self):
        d = asdict(self)
        d["task"] = self.task.to_dict()
        return d

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class StepTrace:
    timestamp: int
    env_seed: int
    mode: str
    task: str
    observation: list
    candidates: list = field(default_factory=list)
    cluster_sizes: list = field(default_factory=list)
    narrations: list = None
    verdict: dict = None
    chosen_index: int = None
    executed_features: dict = None
    success: bool = False
    abstained: bool = False

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _policy_for(policy, config):
    if config.mode_weight_override:
        return policy.with_weights(config.mode_weight_override)
    return policy


def _feature_config(task):
    return FeatureConfig.for_task(task.family)


def default_verifier(config):
    return OracleVerifier(_feature_config(config.task), max_k=config.k)


def _candidates(obs, policy, params, config, rng_seed, trace):
    plans = sample_plans(_policy_for(policy, config), obs, config.n_samples, rng_seed, config.temperature)
    if len(plans[0]) != config.plan_horizon:
        raise ConfigurationError("policy horizon does not match plan_horizon")
    clusters = cluster_plans(plans, config.k, config.max_iter, rng_seed, config.band)
    keep = nms_filter(clusters, config.nms_eps, config.band) if config.nms_eps else range(config.k)
    centers = [clusters.centers[i] for i in keep]
    trace.candidates = [c.actions.tolist() for c in centers]
    trace.cluster_sizes = [int(clusters.sizes[i]) for i in keep]
    init = encode_init(params, obs, mode="mean")
    rollouts = imagine_batch(params, init, centers, config.imagine_mode, rng_seed)
    return centers, rollouts


def _new_trace(obs, config, mode, env_seed, timestamp):
    return StepTrace(timestamp, int(env_seed), mode, config.task.id, np.asarray(obs).tolist())


def steer_once(obs, policy, params, config, rng_seed, verifier=None, env_seed=None, timestamp=0):
    """One steering decision. Returns ``(chosen ActionPlan, StepTrace)``.

    A verifier failure is re-raised as :class:`SteeringError` with the partial trace.
    """
    obs = check_observation(obs)
    config.validate()
    verifier = verifier or default_verifier(config)
    trace = _new_trace(obs, config, "steer", rng_seed if env_seed is None else env_seed, timestamp)
    centers, rollouts = _candidates(obs, policy, params, config, rng_seed, trace)
    try:
        narrations = verifier.narrate_many(rollouts, params)
        trace.narrations = [n.text for n in narrations]
        verdict = verifier.select(narrations, config.task)
    except VerifierError as exc:
        raise SteeringError(f"verifier failed: {exc}", trace=trace) from exc
    trace.verdict = verdict.to_dict()
    trace.chosen_index = verdict.chosen_index
    trace.abstained = verdict.abstain
    return centers[verdict.chosen_index], trace


def classifier_once(obs, policy, params, config, rng_seed, classifier, env_seed=None, timestamp=0):
    """Plan filtering with the task-blind latent classifier: highest success probability wins."""
    obs = check_observation(obs)
    config.validate()
    trace = _new_trace(obs, config, "classifier", rng_seed if env_seed is None else env_seed, timestamp)
    centers, rollouts = _candidates(obs, policy, params, config, rng_seed, trace)
    probs = classifier.predict_proba(rollouts)[:, 1]
    chosen = int(np.argmax(probs))
    per = tuple(CandidateScore(float(p), bool(p >= 0.5), f"p(success)={p:.3f}") for p in probs)
    trace.verdict = Verdict(chosen, per).to_dict()
    trace.chosen_index = chosen
    return centers[chosen], trace


def execute(task, state, plan, env_seed):
    """Run a plan open-loop and return its ground-truth behavior features."""
    obs, _ = rollout(state, plan.actions, env_seed)
    return extract_features(obs, _feature_config(task))


def run_episode(env_seed, config, policy, params=None, mode="steer", verifier=None, classifier=None, timestamp=0):
    """One seeded trial. Abstention executes nothing and counts as failure."""
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    task = config.task
    state = reset(task.family, env_seed)
    obs = observe(state)
    if mode == "baseline":
        trace = _new_trace(obs, config, mode, env_seed, timestamp)
        plan = sample_plans(_policy_for(policy, config), obs, 1, env_seed, config.temperature)[0]
        trace.candidates = [plan.actions.tolist()]
        trace.chosen_index = 0
    elif mode == "steer":
        plan, trace = steer_once(obs, policy, params, config, env_seed, verifier, env_seed, timestamp)
    else:
        if classifier is None:
            raise ConfigurationError("classifier mode needs a trained classifier")
        plan, trace = classifier_once(obs, policy, params, config, env_seed, classifier, env_seed, timestamp)
    if trace.abstained:
        logger.info("episode %d: every candidate is forbidden, abstaining", env_seed)
        return trace
    features = execute(task, state, plan, env_seed)
    trace.executed_features = features.to_dict()
    trace.success = task.allows(features)
    return trace


def wald_interval(successes, n, z=1.96):
    """Normal-approximation interval for a proportion, clipped to [0, 1]."""
    if n <= 0:
        raise ConfigurationError("need at least one trial")
    p = successes / n
    half = z * math.sqrt(p * (1 - p) / n)
    return max(0.0, p - half), min(1.0, p + half)


def summarize(traces, config, extra=None):
    n = len(traces)
    wins = sum(t.success for t in traces)
    lo, hi = wald_interval(wins, n)
    summary = {
        "task": config.task.id,
        "mode": traces[0].mode if traces else None,
        "episodes": n,
        "successes": wins,
        "success_rate": wins / n,
        "ci95": [lo, hi],
        "ci_method": "wald",
        "abstained": sum(t.abstained for t in traces),
        "config_hash": config.digest(),
    }
    summary.update(extra or {})
    return summary


def run_steering(config, policy, params=None, n_episodes=20, seed=0, mode="steer", verifier=None,
                 classifier=None, trace_path=None):
    """Run ``n_episodes`` seeded trials; env seeds are ``seed, seed + 1, ...``.

    Traces are written to ``trace_path`` (JSON lines) only after every episode
    finished, so a failing run leaves no partial log.
    """
    n_episodes = check_positive_int(n_episodes, "n_episodes")
    traces = [
        run_episode(seed + i, config, policy, params, mode, verifier, classifier, timestamp=i)
        for i in range(n_episodes)
    ]
    if trace_path is not None:
        with open(trace_path, "w", encoding="utf-8") as fh:
            for t in traces:
                fh.write(t.to_json() + "\n")
    return traces, summarize(traces, config)


@dataclass(frozen=True)
class MonitorReport:
    """Failure is the positive class: TPR is the share of failures flagged."""

    acc: float
    tpr: float
    tnr: float
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self):
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self):
        d = asdict(self)
        d["n"] = self.n
        return d


def confusion_report(predicted_ok, actual_ok):
    predicted_ok = np.asarray(predicted_ok, dtype=bool)
    actual_ok = np.asarray(actual_ok, dtype=bool)
    if predicted_ok.size == 0:
        raise ConfigurationError("monitoring needs at least one labeled rollout")
    if predicted_ok.shape != actual_ok.shape:
        raise ConfigurationError("need one label per verdict")
    fail_pred, fail_true = ~predicted_ok, ~actual_ok
    tp = int(np.sum(fail_pred & fail_true))
    tn = int(np.sum(~fail_pred & ~fail_true))
    fp = int(np.sum(fail_pred & ~fail_true))
    fn = int(np.sum(~fail_pred & fail_true))
    tpr = tp / (tp + fn) if tp + fn else float("nan")
    tnr = tn / (tn + fp) if tn + fp else float("nan")
    return MonitorReport((tp + tn) / predicted_ok.size, tpr, tnr, tp, tn, fp, fn)


def monitor_rollouts(narrations, labels, task, verifier=None):
    """Monitor verdicts for narrated rollouts against ground-truth ok labels."""
    task = get_task(task)
    verifier = verifier or OracleVerifier(_feature_config(task))
    if len(narrations) == 0:
        raise ConfigurationError("monitoring needs at least one labeled rollout")
    predicted = [verifier.monitor(n, task).ok for n in narrations]
    return confusion_report(predicted, labels)


def ground_truth_ok(episode, task):
    return monitor_features(episode.behavior_label, get_task(task)).ok


def imagine_episodes(episodes, params, horizon=PLAN_HORIZON):
    """Imagined rollouts of each episode's first ``horizon`` actions from its first observation."""
    out = []
    for i, ep in enumerate(episodes):
        init = encode_init(params, ep.observations[0], mode="mean")
        r = imagine_batch(params, init, [ep.actions[:horizon]], "mean")[0]
        out.append(type(r)(r.states, r.downsampled, i))
    return out


def narrate_episodes(episodes, params, task, verifier=None, horizon=PLAN_HORIZON):
    task = get_task(task)
    verifier = verifier or OracleVerifier(_feature_config(task))
    return [verifier.narrate(r, params) for r in imagine_episodes(episodes, params, horizon)]


def ground_truth_frames(episode, horizon=PLAN_HORIZON, stride=4):
    """True observations at the imagined downsample steps (4, 8, ..., horizon)."""
    return np.asarray(episode.observations)[stride : horizon + 1 : stride]


def decoded_frames(rollout, params):
    return decode_many(params, rollout.downsampled)
