"""Mode-mixture base policy over T-step action plans.

Each mode is a diagonal Gaussian around a mean plan, shifted by an affine map
of the current observation. Modes come from k-means over time-aligned demo
plans; mixture weights can be overridden after fitting to reproduce a base
policy that favours the wrong mode.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.cluster import KMeans

from ._validation import (
    D_ACT,
    D_OBS,
    check_actions,
    check_is_fitted,
    check_observation,
    check_positive_int,
    check_random_state,
)
from .exceptions import CheckpointError, ConfigurationError
from .objects import MAX_STEP

PLAN_HORIZON = 64
VAR_FLOOR = 1e-10
FORMAT = "policysteer.policy/1"


@dataclass
class ActionPlan:
    actions: np.ndarray
    mode_hint: str = None

    def __post_init__(self):
        self.actions = check_actions(self.actions)

    def __len__(self):
        return len(self.actions)


def clamp_plan(actions):
    out = np.array(actions, dtype=np.float64, copy=True)
    np.clip(out[:, :2], -MAX_STEP, MAX_STEP, out=out[:, :2])
    np.clip(out[:, 2], 0.0, 1.0, out=out[:, 2])
    return out


@dataclass
class PlanMode:
    mode_id: str
    weight: float
    mean_plan: np.ndarray  # (T, 3)
    var: np.ndarray  # (T, 3)
    cond_matrix: np.ndarray  # (d_obs, T*3)
    obs_mean: np.ndarray  # (d_obs,)

    def conditioned_mean(self, obs):
        offset = (np.asarray(obs) - self.obs_mean) @ self.cond_matrix
        return self.mean_plan + offset.reshape(self.mean_plan.shape)


@dataclass
class ModeMixture:
    modes: list = field(default_factory=list)

    @property
    def weights(self):
        return np.array([m.weight for m in self.modes])

    @property
    def horizon(self):
        return self.modes[0].mean_plan.shape[0]

    @property
    def mode_ids(self):
        return [m.mode_id for m in self.modes]

    def validate(self):
        if not self.modes:
            raise ConfigurationError("mixture has no modes")
        w = self.weights
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"mode weights must be nonnegative and sum to 1, got {w}")
        T = self.horizon
        for m in self.modes:
            if m.mean_plan.shape != (T, D_ACT) or m.var.shape != (T, D_ACT):
                raise ConfigurationError(f"mode {m.mode_id!r} has inconsistent plan shapes")
            if m.cond_matrix.shape != (D_OBS, T * D_ACT) or m.obs_mean.shape != (D_OBS,):
                raise ConfigurationError(f"mode {m.mode_id!r} has inconsistent conditioning shapes")
            if not np.all(m.var > 0):
                raise ConfigurationError(f"mode {m.mode_id!r} has nonpositive variance")
            for arr in (m.mean_plan, m.var, m.cond_matrix, m.obs_mean):
                if not np.all(np.isfinite(arr)):
                    raise ConfigurationError(f"mode {m.mode_id!r} has non-finite entries")
        return self

    def with_weights(self, weights):
        """Copy with overridden weights, given as a list or a ``{mode_id: weight}`` dict."""
        if isinstance(weights, dict):
            unknown = set(weights) - set(self.mode_ids)
            if unknown:
                raise ConfigurationError(f"unknown mode ids in weight override: {sorted(unknown)}")
            w = np.array([float(weights.get(m, 0.0)) for m in self.mode_ids])
        else:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (len(self.modes),):
                raise ConfigurationError(f"expected {len(self.modes)} weights, got {w.shape}")
        if np.any(w < 0) or w.sum() <= 0:
            raise ConfigurationError("weights must be nonnegative with positive sum")
        w = w / w.sum()
        modes = [
            PlanMode(m.mode_id, float(wi), m.mean_plan, m.var, m.cond_matrix, m.obs_mean)
            for m, wi in zip(self.modes, w)
        ]
        return ModeMixture(modes).validate()

    def to_json(self):
        return json.dumps(
            {
                "format": FORMAT,
                "horizon": self.horizon,
                "modes": [
                    {
                        "mode_id": m.mode_id,
                        "weight": m.weight,
                        "mean_plan": m.mean_plan.tolist(),
                        "var": m.var.tolist(),
                        "cond_matrix": m.cond_matrix.tolist(),
                        "obs_mean": m.obs_mean.tolist(),
                    }
                    for m in self.modes
                ],
            }
        )

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
            if doc.get("format") != FORMAT:
                raise CheckpointError(f"unexpected policy format {doc.get('format')!r}")
            modes = [
                PlanMode(
                    str(m["mode_id"]),
                    float(m["weight"]),
                    np.array(m["mean_plan"], dtype=np.float64),
                    np.array(m["var"], dtype=np.float64),
                    np.array(m["cond_matrix"], dtype=np.float64),
                    np.array(m["obs_mean"], dtype=np.float64),
                )
                for m in doc["modes"]
            ]
            mixture = cls(modes)
            if mixture.horizon != doc["horizon"]:
                raise CheckpointError("horizon does not match mode shapes")
            return mixture.validate()
        except CheckpointError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise CheckpointError(f"invalid policy checkpoint: {exc}") from exc

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _ridge(X, Y, alpha):
    """Ridge map from centered observations to plan offsets; constant inputs get zero rows."""
    cond = np.zeros((X.shape[1], Y.shape[1]))
    scale = X.std(axis=0)
    live = scale > 1e-9
    if len(X) < 2 or not live.any():
        return cond
    Xs = X[:, live] / scale[live]
    gram = Xs.T @ Xs + alpha * len(X) * np.eye(Xs.shape[1])
    cond[live] = np.linalg.solve(gram, Xs.T @ Y) / scale[live][:, None]
    return cond


def fit_policy(demos, n_modes, rng_seed=0, horizon=PLAN_HORIZON, ridge=1e-3):
    """Fit a mode mixture to demonstrations (first ``horizon`` actions of each)."""
    n_modes = check_positive_int(n_modes, "n_modes")
    if len(demos) < n_modes:
        raise ConfigurationError(f"need at least {n_modes} demonstrations, got {len(demos)}")
    plans, obs0 = [], []
    for ep in demos:
        if len(ep.actions) < horizon:
            raise ConfigurationError(f"demo shorter than plan horizon {horizon}")
        plans.append(np.asarray(ep.actions[:horizon], dtype=np.float64))
        obs0.append(np.asarray(ep.observations[0], dtype=np.float64))
    plans = np.stack(plans)
    obs0 = np.stack(obs0)
    flat = plans.reshape(len(plans), -1)

    km = KMeans(n_clusters=n_modes, n_init=10, random_state=rng_seed).fit(flat)
    labels = km.labels_
    modes = []
    for k in range(n_modes):
        members = np.flatnonzero(labels == k)
        obs_mean = obs0[members].mean(axis=0)
        mean_flat = flat[members].mean(axis=0)
        X = obs0[members] - obs_mean
        Y = flat[members] - mean_flat
        cond = _ridge(X, Y, ridge)
        resid = Y - X @ cond
        var = np.maximum((resid**2).mean(axis=0), VAR_FLOOR).reshape(horizon, D_ACT)
        hints = [demos[i].mode_hint for i in members if demos[i].mode_hint]
        mode_id = max(set(hints), key=hints.count) if hints else f"mode{k}"
        modes.append(
            PlanMode(
                mode_id=mode_id,
                weight=len(members) / len(flat),
                mean_plan=mean_flat.reshape(horizon, D_ACT),
                var=var,
                cond_matrix=cond,
                obs_mean=obs_mean,
            )
        )
    # deterministic mode order regardless of k-means label permutation
    modes.sort(key=lambda m: m.mode_id)
    return ModeMixture(modes).validate()


def sample_plans(policy, obs, n, rng_seed=0, temperature=1.0):
    """Draw ``n`` plans: categorical mode choice, then Gaussian noise around the conditioned mean."""
    n = check_positive_int(n, "n")
    obs = check_observation(obs)
    rng = check_random_state(rng_seed)
    choices = rng.choice(len(policy.modes), size=n, p=policy.weights)
    noise = rng.standard_normal((n, policy.horizon, D_ACT))
    means = [m.conditioned_mean(obs) for m in policy.modes]
    plans = []
    for i, k in enumerate(choices):
        mode = policy.modes[k]
        actions = means[k] + temperature * np.sqrt(mode.var) * noise[i]
        plans.append(ActionPlan(clamp_plan(actions), mode.mode_id))
    return plans


class ModeMixturePolicy(BaseEstimator):
    """Estimator wrapper: ``fit(demos)`` then ``sample(obs, n)``.

    Parameters
    ----------
    n_modes : int
        Number of plan clusters.
    horizon : int
        Plan length T.
    mode_weights : dict or list, optional
        Overrides the empirical mode fractions after fitting.
    temperature : float
        Scale on the per-step standard deviation when sampling.
    random_state : int
    """

    def __init__(self, n_modes=2, horizon=PLAN_HORIZON, mode_weights=None, temperature=1.0, random_state=0):
        self.n_modes = n_modes
        self.horizon = horizon
        self.mode_weights = mode_weights
        self.temperature = temperature
        self.random_state = random_state

    def fit(self, demos, y=None):
        mixture = fit_policy(demos, self.n_modes, self.random_state, self.horizon)
        if self.mode_weights is not None:
            mixture = mixture.with_weights(self.mode_weights)
        self.mixture_ = mixture
        return self

    def sample(self, obs, n=1, rng_seed=None):
        check_is_fitted(self, "mixture_")
        seed = self.random_state if rng_seed is None else rng_seed
        return sample_plans(self.mixture_, obs, n, seed, self.temperature)

    @classmethod
    def from_mixture(cls, mixture, **params):
        est = cls(n_modes=len(mixture.modes), horizon=mixture.horizon, **params)
        est.mixture_ = mixture
        return est
