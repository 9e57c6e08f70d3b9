"""Mixed demonstration + policy-rollout datasets for world-model training."""

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive_int
from .env import (
    TASK_MODES,
    episode_rng,
    extend_plan,
    generate_demos,
    make_episode,
    observe,
    read_episodes,
    reset,
    step_seed,
    write_episodes,
)
from .exceptions import ConfigurationError
from .objects import get_object_kind
from .policy import fit_policy, sample_plans


@dataclass(frozen=True)
class DatasetConfig:
    task: str = "cup"
    modes: tuple = ("handle", "rim")
    n_demos_per_mode: int = 50
    n_rollouts: int = 250
    n_test: int = 50
    temperature_range: tuple = (1.0, 3.0)
    seed: int = 0

    def validate(self):
        kind = get_object_kind(self.task)
        if not self.modes:
            raise ConfigurationError("modes must be nonempty")
        for mode in self.modes:
            if mode not in TASK_MODES[kind.name]:
                raise ConfigurationError(f"unknown mode {mode!r} for task {kind.name!r}")
        check_positive_int(self.n_demos_per_mode, "n_demos_per_mode")
        check_positive_int(self.n_rollouts, "n_rollouts", minimum=0)
        check_positive_int(self.n_test, "n_test", minimum=0)
        lo, hi = self.temperature_range
        if not 0 < lo <= hi:
            raise ConfigurationError("temperature_range must satisfy 0 < low <= high")
        if self.n_test >= self.n_demos_per_mode * len(self.modes) + self.n_rollouts:
            raise ConfigurationError("n_test leaves no training episodes")
        return self


def policy_rollouts(policy, task, n, seed, temperature_range=(1.0, 3.0), offset=0):
    """Execute one sampled plan per episode; the sampling temperature varies per episode."""
    kind = get_object_kind(task)
    lo, hi = temperature_range
    episodes = []
    for i in range(n):
        index = offset + i
        rng = episode_rng(seed, index)
        state = reset(kind.name, int(rng.integers(2**31)))
        temperature = float(rng.uniform(lo, hi))
        plan = sample_plans(policy, observe(state), 1, int(rng.integers(2**31)), temperature)[0]
        ep_seed = step_seed(seed, index) % (2**31)
        episodes.append(
            make_episode(
                kind.name,
                state,
                extend_plan(plan.actions),
                "policy_rollout",
                ep_seed,
                mode_hint=plan.mode_hint,
                extra={"temperature": temperature},
            )
        )
    return episodes


def generate_dataset(config=None):
    """Demos, then rollouts of a policy fit to those demos; returns (demos, train, test).

    The test split is a seeded random subset of all episodes.
    """
    config = (config or DatasetConfig()).validate()
    demos = generate_demos(config.task, config.n_demos_per_mode, config.modes, config.seed)
    policy = fit_policy(demos, len(config.modes), config.seed)
    rollouts = policy_rollouts(
        policy, config.task, config.n_rollouts, config.seed + 1, config.temperature_range
    )
    episodes = demos + rollouts
    order = np.random.default_rng(config.seed).permutation(len(episodes))
    test = sorted(order[: config.n_test].tolist())
    train = sorted(order[config.n_test :].tolist())
    return demos, [episodes[i] for i in train], [episodes[i] for i in test]


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_dataset(out_dir, train, test, config, force=False):
    """Write ``train.jsonl``, ``test.jsonl`` and ``manifest.json``."""
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise FileExistsError(f"output directory {out_dir!r} is not empty; use --force to overwrite")
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    for name, eps in (("train", train), ("test", test)):
        path = os.path.join(out_dir, f"{name}.jsonl")
        write_episodes(path, eps)
        files[name] = {"path": f"{name}.jsonl", "sha256": file_sha256(path), "n": len(eps)}
    everything = train + test
    manifest = {
        "format": "policysteer.dataset/1",
        "task": config.task,
        "seed": config.seed,
        "counts": {
            "demo": sum(e.source == "demo" for e in everything),
            "rollout": sum(e.source == "policy_rollout" for e in everything),
            "train": len(train),
            "test": len(test),
        },
        "files": files,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_dataset(data_dir):
    """Read a dataset directory, checking file hashes against the manifest."""
    path = os.path.join(data_dir, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"no dataset manifest at {path}") from None
    out = {}
    for name in ("train", "test"):
        entry = manifest["files"][name]
        fpath = os.path.join(data_dir, entry["path"])
        if file_sha256(fpath) != entry["sha256"]:
            raise ConfigurationError(f"{fpath} does not match its manifest hash")
        out[name] = read_episodes(fpath)
    return manifest, out["train"], out["test"]
