"""Run configuration: one flat, versioned JSON document validated by a schema."""

import hashlib
import json
import os
from dataclasses import dataclass, fields

import jsonschema

from .data import DatasetConfig
from .exceptions import ConfigurationError
from .steering import SteeringConfig
from .verifier.tasks import BUILTIN_TASKS
from .worldmodel.model import WorldModelConfig

SCHEMA_VERSION = 1

_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "policysteer run config",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "task": {"enum": sorted(BUILTIN_TASKS)},
        "seed": _nonneg_int,
        "out_dir": {"type": "string", "minLength": 1},
        # dataset
        "modes": {"type": "array", "items": {"type": "string"}},
        "n_demos_per_mode": _pos_int,
        "n_rollouts": _nonneg_int,
        "n_test": _nonneg_int,
        "rollout_temperature_min": {"type": "number", "exclusiveMinimum": 0},
        "rollout_temperature_max": {"type": "number", "exclusiveMinimum": 0},
        # world model
        "wm_d_h": _pos_int,
        "wm_d_z": _pos_int,
        "wm_d_hidden": _pos_int,
        "wm_alpha_dyn": {"type": "number", "minimum": 0},
        "wm_alpha_rep": {"type": "number", "minimum": 0},
        "wm_alpha_pred": {"type": "number", "minimum": 0},
        "wm_free_nats": {"type": "number", "minimum": 0},
        "wm_lr": {"type": "number", "exclusiveMinimum": 0},
        "wm_lr_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "wm_skip_initial_kl": {"type": "boolean"},
        "wm_momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "wm_grad_clip": {"type": "number", "exclusiveMinimum": 0},
        "wm_batch_size": _pos_int,
        "wm_max_epochs": _nonneg_int,
        "wm_patience": _pos_int,
        "wm_val_metric": {"enum": ["open_loop", "teacher_forced"]},
        # verifier + steering
        "backend": {"enum": ["oracle", "client", "classifier"]},
        "verifier_endpoint": {"type": ["string", "null"]},
        "verifier_timeout": {"type": "number", "exclusiveMinimum": 0},
        "verifier_retries": _nonneg_int,
        "n_samples": _pos_int,
        "k": _pos_int,
        "temperature": {"type": "number", "exclusiveMinimum": 0},
        "mode_weights": {
            "type": ["object", "null"],
            "additionalProperties": {"type": "number", "minimum": 0},
        },
        "episodes": _pos_int,
        "classifier_task": {"enum": sorted(BUILTIN_TASKS)},
    },
}

_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "task": "cup-serve",
    "seed": 0,
    "out_dir": "runs/default",
    "modes": ["handle", "rim"],
    "n_demos_per_mode": 50,
    "n_rollouts": 250,
    "n_test": 50,
    "rollout_temperature_min": 1.0,
    "rollout_temperature_max": 3.0,
    "backend": "oracle",
    "verifier_endpoint": None,
    "verifier_timeout": 10.0,
    "verifier_retries": 2,
    "n_samples": 100,
    "k": 6,
    "temperature": 1.0,
    "mode_weights": {"handle": 0.3, "rim": 0.7},
    "episodes": 20,
    "classifier_task": "cup-serve",
}
for _f in fields(WorldModelConfig):
    if f"wm_{_f.name}" in RUN_CONFIG_SCHEMA["properties"]:
        _DEFAULTS[f"wm_{_f.name}"] = _f.default


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration. ``values`` holds every key, defaults filled in."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_dict(cls, d):
        validate_config(d)
        values = dict(_DEFAULTS)
        values.update(d)
        if values["rollout_temperature_min"] > values["rollout_temperature_max"]:
            raise ConfigurationError("rollout_temperature_min exceeds rollout_temperature_max")
        if values["n_samples"] < values["k"]:
            raise ConfigurationError("n_samples must be >= k")
        return cls(values)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path!r} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path!r} is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    @classmethod
    def default(cls):
        return cls.from_dict({"schema_version": SCHEMA_VERSION})

    def with_overrides(self, **overrides):
        d = dict(self.values)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)

    def to_json(self):
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def path(self, *parts):
        return os.path.join(self["out_dir"], *parts)

    def dataset_config(self):
        task = BUILTIN_TASKS[self["task"]]
        return DatasetConfig(
            task=task.family,
            modes=tuple(self["modes"]),
            n_demos_per_mode=self["n_demos_per_mode"],
            n_rollouts=self["n_rollouts"],
            n_test=self["n_test"],
            temperature_range=(self["rollout_temperature_min"], self["rollout_temperature_max"]),
            seed=self["seed"],
        ).validate()

    def worldmodel_config(self):
        kw = {f.name: self[f"wm_{f.name}"] for f in fields(WorldModelConfig) if f"wm_{f.name}" in self.values}
        return WorldModelConfig(seed=self["seed"], **kw).validate()

    def steering_config(self):
        return SteeringConfig(
            task=self["task"],
            n_samples=self["n_samples"],
            k=self["k"],
            backend=self["backend"],
            mode_weight_override=self["mode_weights"],
            temperature=self["temperature"],
        ).validate()


def validate_config(d):
    """Schema check; unknown keys and wrong types raise :class:`ConfigurationError`."""
    try:
        jsonschema.validate(d, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"invalid config at {where}: {exc.message}") from None
    return d
