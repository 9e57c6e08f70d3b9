"""World-model estimator: training loop, latent encoding, imagination and decoding."""

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from .._validation import (
    D_ACT,
    D_OBS,
    check_actions,
    check_is_fitted,
    check_observation,
    check_positive_int,
    check_random_state,
)
from ..exceptions import ConfigurationError, TrainingError
from ..policy import ActionPlan
from . import rssm

logger = logging.getLogger(__name__)

DOWNSAMPLE_STRIDE = 4
VAL_METRICS = ("open_loop", "teacher_forced")


@dataclass(frozen=True)
class WorldModelConfig:
    d_h: int = 32
    d_z: int = 8
    d_hidden: int = 64
    alpha_dyn: float = 0.5
    alpha_rep: float = 0.1
    alpha_pred: float = 1.0
    lr: float = 3e-3
    lr_decay: float = 0.05
    momentum: float = 0.9
    grad_clip: float = 100.0
    batch_size: int = 16
    seq_len: int = 64
    max_epochs: int = 320
    patience: int = 500
    val_fraction: float = 0.1
    obs_unit: float = 1.0
    free_nats: float = 3.0
    skip_initial_kl: bool = False
    random_offset: bool = False
    val_metric: str = "open_loop"
    seed: int = 0

    @property
    def loss_weights(self):
        return (self.alpha_dyn, self.alpha_rep, self.alpha_pred)

    def validate(self):
        for name in ("d_h", "d_z", "d_hidden", "batch_size", "seq_len"):
            check_positive_int(getattr(self, name), name)
        check_positive_int(self.max_epochs, "max_epochs", minimum=0)
        check_positive_int(self.patience, "patience")
        for name in ("alpha_dyn", "alpha_rep", "alpha_pred"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if not 0 < self.lr_decay <= 1:
            raise ConfigurationError("lr_decay must be in (0, 1]")
        if not self.lr > 0 or not 0 <= self.momentum < 1 or not self.grad_clip > 0:
            raise ConfigurationError("need lr > 0, 0 <= momentum < 1 and grad_clip > 0")
        if not self.obs_unit > 0:
            raise ConfigurationError("obs_unit must be positive")
        if self.free_nats < 0:
            raise ConfigurationError("free_nats must be nonnegative")
        if self.val_metric not in VAL_METRICS:
            raise ConfigurationError(f"val_metric must be one of {VAL_METRICS}")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must be in (0, 1)")
        return self


@dataclass
class WorldModelParams:
    """Trained weights plus the normalization statistics they were fit under."""

    weights: dict
    d_h: int
    d_z: int
    d_hidden: int
    loss_weights: tuple = (0.5, 0.1, 1.0)
    obs_mean: np.ndarray = field(default_factory=lambda: np.zeros(D_OBS))
    obs_std: np.ndarray = field(default_factory=lambda: np.ones(D_OBS))
    act_mean: np.ndarray = field(default_factory=lambda: np.zeros(D_ACT))
    act_std: np.ndarray = field(default_factory=lambda: np.ones(D_ACT))
    seed: int = 0
    data_hash: str = ""
    history: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, d_h=32, d_z=8, d_hidden=64, seed=0, loss_weights=(0.5, 0.1, 1.0), dtype=np.float64):
        shapes = rssm.param_shapes(D_OBS, D_ACT, d_h, d_z, d_hidden)
        weights = rssm.init_params(shapes, check_random_state(seed), dtype)
        return cls(weights, d_h, d_z, d_hidden, tuple(loss_weights), seed=seed)

    @property
    def shapes(self):
        return rssm.param_shapes(D_OBS, D_ACT, self.d_h, self.d_z, self.d_hidden)

    def validate(self):
        shapes = self.shapes
        if set(shapes) != set(self.weights):
            raise ConfigurationError("parameter names do not match the model layout")
        for name, shape in shapes.items():
            arr = self.weights[name]
            if arr.shape != shape:
                raise ConfigurationError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name} has non-finite entries")
        for name, d in (("obs_mean", D_OBS), ("obs_std", D_OBS), ("act_mean", D_ACT), ("act_std", D_ACT)):
            if np.shape(getattr(self, name)) != (d,):
                raise ConfigurationError(f"{name} must have shape ({d},)")
        if np.any(self.obs_std <= 0) or np.any(self.act_std <= 0):
            raise ConfigurationError("normalization scales must be positive")
        return self

    def norm_obs(self, obs):
        return (np.asarray(obs) - self.obs_mean) / self.obs_std

    def denorm_obs(self, obs_n):
        return np.asarray(obs_n) * self.obs_std + self.obs_mean

    def norm_act(self, act):
        return (np.asarray(act) - self.act_mean) / self.act_std


@dataclass(frozen=True, eq=False)
class LatentState:
    h: np.ndarray
    z: np.ndarray
    z_mean: np.ndarray
    z_logstd: np.ndarray

    @property
    def feature(self):
        """Concatenated ``[h, z]`` vector."""
        return np.concatenate([self.h, self.z])


@dataclass(frozen=True, eq=False)
class LatentRollout:
    states: tuple
    downsampled: tuple
    plan_index: int = 0

    @classmethod
    def from_states(cls, states, plan_index=0):
        states = tuple(states)
        picked = tuple(states[i] for i in range(DOWNSAMPLE_STRIDE - 1, len(states), DOWNSAMPLE_STRIDE))
        return cls(states, picked, plan_index)

    def features(self, which="downsampled"):
        seq = self.downsampled if which == "downsampled" else self.states
        return np.stack([s.feature for s in seq])


def _sample(mean, logstd, mode, rng):
    if mode == "mean":
        return mean.copy()
    return mean + np.exp(logstd) * rng.standard_normal(mean.shape)


def _check_mode(mode):
    if mode not in ("mean", "sample"):
        raise ConfigurationError(f"mode must be 'mean' or 'sample', got {mode!r}")


def encode_init(params, obs, rng_seed=0, mode="sample"):
    """Posterior latent for the first observation, with ``h = 0``."""
    _check_mode(mode)
    obs = check_observation(obs)
    h = np.zeros(params.d_h)
    mean, logstd = rssm.posterior(params.weights, params.norm_obs(obs), h)
    z = _sample(mean, logstd, mode, check_random_state(rng_seed))
    return LatentState(h, z, mean, logstd)


def encode_step(params, obs, prev, prev_action, rng_seed=0, mode="sample"):
    """Advance the GRU on ``(prev.z, prev_action)`` and condition on ``obs``."""
    _check_mode(mode)
    obs = check_observation(obs)
    action = np.asarray(prev_action, dtype=np.float64)
    if action.shape != (D_ACT,):
        raise ConfigurationError(f"prev_action must have shape ({D_ACT},), got {action.shape}")
    if prev.h.shape != (params.d_h,) or prev.z.shape != (params.d_z,):
        raise ConfigurationError("latent state does not match the model dimensions")
    x = np.concatenate([prev.z, params.norm_act(action)])
    h, _ = rssm.gru_cell(params.weights, prev.h, x)
    mean, logstd = rssm.posterior(params.weights, params.norm_obs(obs), h)
    z = _sample(mean, logstd, mode, check_random_state(rng_seed))
    return LatentState(h, z, mean, logstd)


def imagine_batch(params, init, plans, mode="mean", rng_seed=0):
    """Open-loop prior rollouts of several plans from one initial latent."""
    _check_mode(mode)
    acts = np.stack([check_actions(p.actions if isinstance(p, ActionPlan) else p) for p in plans])
    if len({a.shape for a in acts}) != 1:
        raise ConfigurationError("plans must share one horizon")
    n, T, _ = acts.shape
    rng = check_random_state(rng_seed)
    acts_n = params.norm_act(acts)
    h = np.repeat(init.h[None], n, axis=0)
    z = np.repeat(init.z[None], n, axis=0)
    hs, zs, means, logstds = [], [], [], []
    for t in range(T):
        h, _ = rssm.gru_cell(params.weights, h, np.concatenate([z, acts_n[:, t]], axis=-1))
        mean, logstd = rssm.prior(params.weights, h)
        z = _sample(mean, logstd, mode, rng)
        hs.append(h)
        zs.append(z)
        means.append(mean)
        logstds.append(logstd)
    rollouts = []
    for i in range(n):
        states = [LatentState(hs[t][i], zs[t][i], means[t][i], logstds[t][i]) for t in range(T)]
        rollouts.append(LatentRollout.from_states(states, plan_index=i))
    return rollouts


def imagine(params, init, plan, mode="mean", rng_seed=0, plan_index=0):
    rollout = imagine_batch(params, init, [plan], mode, rng_seed)[0]
    return LatentRollout(rollout.states, rollout.downsampled, plan_index)


def decode(params, state):
    """Observation estimate for one latent state."""
    return params.denorm_obs(rssm.decode(params.weights, state.h, state.z))


def decode_many(params, states):
    h = np.stack([s.h for s in states])
    z = np.stack([s.z for s in states])
    return params.denorm_obs(rssm.decode(params.weights, h, z))


def dataset_hash(episodes):
    digest = hashlib.sha256()
    for ep in episodes:
        digest.update(np.ascontiguousarray(ep.observations, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(ep.actions, dtype="<f8").tobytes())
    return digest.hexdigest()


def _segments(episodes, seq_len):
    obs, act = [], []
    for ep in episodes:
        o = np.asarray(ep.observations, dtype=np.float64)
        a = np.asarray(ep.actions, dtype=np.float64)
        if len(a) < seq_len or len(o) < seq_len + 1:
            raise ConfigurationError(f"episode shorter than segment length {seq_len}")
        obs.append(o)
        act.append(a)
    return obs, act


def _batch(obs, act, idx, seq_len, params, rng, random_offset):
    """Time-major normalized batch for episode indices ``idx``."""
    o_b, a_b = [], []
    for i in idx:
        start = int(rng.integers(len(act[i]) - seq_len + 1)) if random_offset else 0
        o_b.append(obs[i][start : start + seq_len + 1])
        a_b.append(act[i][start : start + seq_len])
    o = params.norm_obs(np.stack(o_b)).transpose(1, 0, 2)
    a = params.norm_act(np.stack(a_b)).transpose(1, 0, 2)
    return np.ascontiguousarray(o), np.ascontiguousarray(a)


def _scale(x):
    s = x.std(axis=0)
    return np.where(s > 1e-6, s, 1.0)


def _cosine_lr(config, epoch):
    """Cosine anneal from ``lr`` to ``lr * lr_decay`` over ``max_epochs``."""
    frac = (epoch - 1) / max(1, config.max_epochs - 1)
    return config.lr * (config.lr_decay + (1 - config.lr_decay) * 0.5 * (1 + math.cos(math.pi * frac)))


def _open_loop_pred(weights, o, a):
    """Squared prediction error of prior-mean rollouts started from each first observation.

    Same recursion as ``encode_init`` + ``imagine`` in mean mode, summed over
    observation channels and averaged over steps and sequences.
    """
    h = np.zeros((o.shape[1], weights["gru_Un"].shape[0]))
    z, _ = rssm.posterior(weights, o[0], h)
    err = 0.0
    for t in range(a.shape[0]):
        h, _ = rssm.gru_cell(weights, h, np.concatenate([z, a[t]], axis=-1))
        z, _ = rssm.prior(weights, h)
        err += float(np.sum((rssm.decode(weights, h, z) - o[t + 1]) ** 2))
    return err / (a.shape[0] * o.shape[1])


def train_world_model(dataset, config=None, callback=None):
    """Fit the RSSM with momentum SGD and early stopping on a held-out prediction loss.

    A ``val_fraction`` slice of the episodes is held out. With
    ``val_metric="open_loop"`` the held-out loss is the error of open-loop
    prior rollouts (how the model is used when imagining plans); with
    ``"teacher_forced"`` it is the ``pred`` term of the training loss. The
    parameters with the lowest held-out loss are returned.
    """
    config = (config or WorldModelConfig()).validate()
    episodes = list(dataset)
    if not episodes:
        raise ConfigurationError("training dataset is empty")
    obs, act = _segments(episodes, config.seq_len)
    rng = check_random_state(config.seed)

    params = WorldModelParams.initialize(
        config.d_h, config.d_z, config.d_hidden, config.seed, config.loss_weights
    )
    all_obs = np.concatenate(obs)
    all_act = np.concatenate(act)
    params = replace(
        params,
        obs_mean=all_obs.mean(axis=0),
        obs_std=config.obs_unit * _scale(all_obs),
        act_mean=all_act.mean(axis=0),
        act_std=_scale(all_act),
        data_hash=dataset_hash(episodes),
    )

    order = rng.permutation(len(episodes))
    n_val = max(1, int(round(config.val_fraction * len(episodes)))) if len(episodes) > 1 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        train_idx = val_idx
    val_eval_rng = np.random.default_rng(config.seed + 1)
    val_batch = _batch(obs, act, val_idx if n_val else train_idx, config.seq_len, params, val_eval_rng, False)
    val_eps = np.zeros(val_batch[0].shape[:2] + (config.d_z,))

    def val_loss(weights):
        if config.val_metric == "open_loop":
            return _open_loop_pred(weights, *val_batch)
        cache = rssm.forward(weights, val_batch[0], val_batch[1], val_eps)
        return rssm.losses(cache, config.loss_weights)["pred"]

    weights = params.weights
    velocity = {k: np.zeros_like(v) for k, v in weights.items()}
    best = (val_loss(weights), {k: v.copy() for k, v in weights.items()}, 0)
    history = {"train": [], "val": [best[0]], "kl": []}
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(train_idx)
        lr = _cosine_lr(config, epoch)
        totals, kls = [], []
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            o, a = _batch(obs, act, idx, config.seq_len, params, rng, config.random_offset)
            eps = rng.standard_normal(o.shape[:2] + (config.d_z,))
            loss, grads, _ = rssm.loss_and_grads(
                weights, o, a, eps, config.loss_weights, None, config.free_nats, config.skip_initial_kl
            )
            if not np.isfinite(loss["total"]):
                raise TrainingError(f"non-finite loss at epoch {epoch}: {loss}")
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if not np.isfinite(norm):
                raise TrainingError(f"non-finite gradient norm at epoch {epoch}")
            scale = min(1.0, config.grad_clip / norm) if norm > 0 else 1.0
            for k in weights:
                velocity[k] = config.momentum * velocity[k] - lr * scale * grads[k]
                weights[k] = weights[k] + velocity[k]
            totals.append(loss["total"])
            kls.append(loss["dyn"])
        current = val_loss(weights)
        history["train"].append(float(np.mean(totals)))
        history["kl"].append(float(np.mean(kls)))
        history["val"].append(current)
        logger.info("epoch %d train=%.4f val_pred=%.4f", epoch, history["train"][-1], current)
        if callback is not None:
            callback(epoch, history)
        if current < best[0]:
            best = (current, {k: v.copy() for k, v in weights.items()}, epoch)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    history["best_epoch"] = best[2]
    return replace(params, weights=best[1], history=history).validate()


def one_step_mse(params, episodes, seq_len=64):
    """Mean squared error of prior one-step predictions, in normalized units.

    The posterior at step ``t`` is taken at its mean; the GRU then advances on
    ``a_t`` and the prior mean is decoded and compared with ``o_{t+1}``.
    """
    obs, act = _segments(episodes, seq_len)
    o, a = _batch(obs, act, range(len(obs)), seq_len, params, None, False)
    cache = rssm.forward(params.weights, o, a, np.zeros(o.shape[:2] + (params.d_z,)))
    w = params.weights
    x = np.concatenate([cache["mq"][:-1], a], axis=-1)
    h_next, _ = rssm.gru_cell(w, cache["h"][:-1], x)
    mp, _ = rssm.prior(w, h_next)
    pred = rssm.decode(w, h_next, mp)
    return float(np.mean((pred - o[1:]) ** 2))


def reconstruction_mse(params, episodes, seq_len=64):
    """Teacher-forced reconstruction error (posterior means), normalized units."""
    obs, act = _segments(episodes, seq_len)
    o, a = _batch(obs, act, range(len(obs)), seq_len, params, None, False)
    cache = rssm.forward(params.weights, o, a, np.zeros(o.shape[:2] + (params.d_z,)))
    return float(np.mean((cache["recon"] - o) ** 2))


def imagination_kl(params, episodes, seq_len=64):
    """Mean KL(posterior || prior) along teacher-forced sequences."""
    obs, act = _segments(episodes, seq_len)
    o, a = _batch(obs, act, range(len(obs)), seq_len, params, None, False)
    cache = rssm.forward(params.weights, o, a, np.zeros(o.shape[:2] + (params.d_z,)))
    return float(np.mean(rssm.kl_diag(cache["mq"], cache["lq"], cache["mp"], cache["lp"])))


class RSSMWorldModel(BaseEstimator):
    """Estimator wrapper around :func:`train_world_model`.

    ``fit(episodes)`` stores ``params_``; ``imagine``/``decode`` then use it.
    """

    def __init__(self, d_h=32, d_z=8, d_hidden=64, alpha_dyn=0.5, alpha_rep=0.1, alpha_pred=1.0,
                 lr=3e-3, lr_decay=0.05, momentum=0.9, grad_clip=100.0, batch_size=16, seq_len=64,
                 max_epochs=320, patience=500, free_nats=3.0, skip_initial_kl=False,
                 val_metric="open_loop", random_state=0):
        self.d_h = d_h
        self.d_z = d_z
        self.d_hidden = d_hidden
        self.alpha_dyn = alpha_dyn
        self.alpha_rep = alpha_rep
        self.alpha_pred = alpha_pred
        self.lr = lr
        self.lr_decay = lr_decay
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.batch_size = batch_size
        self.seq_len = seq_len
        self.max_epochs = max_epochs
        self.patience = patience
        self.free_nats = free_nats
        self.skip_initial_kl = skip_initial_kl
        self.val_metric = val_metric
        self.random_state = random_state

    def _config(self):
        p = self.get_params()
        seed = p.pop("random_state")
        return WorldModelConfig(seed=seed, **p)

    def fit(self, episodes, y=None):
        self.params_ = train_world_model(episodes, self._config())
        return self

    def encode(self, obs, rng_seed=0, mode="mean"):
        check_is_fitted(self, "params_")
        return encode_init(self.params_, obs, rng_seed, mode)

    def imagine(self, obs, plans, mode="mean", rng_seed=0):
        check_is_fitted(self, "params_")
        init = encode_init(self.params_, obs, rng_seed, "mean")
        return imagine_batch(self.params_, init, plans, mode, rng_seed)

    def decode(self, rollout):
        check_is_fitted(self, "params_")
        return decode_many(self.params_, rollout.downsampled)

    def score(self, episodes, y=None):
        """Negative held-out one-step MSE (higher is better)."""
        check_is_fitted(self, "params_")
        return -one_step_mse(self.params_, episodes, self.seq_len)
