"""Behavior features, the narration grammar, and event extraction from observations.

The grammar is a fixed template over the six behavior fields. Every one of the
288 feature tuples renders to a distinct sentence, so parsing is an exact
inverse lookup.
"""

import itertools
import re
from dataclasses import asdict, dataclass, fields

import numpy as np

from ._validation import check_observations
from .exceptions import ConfigurationError
from .objects import CUP, GRIP_CLOSE_THRESHOLD, HIGH_Y, REGIONS, get_object_kind, rotate

CRUSH_LEVELS = ("none", "light", "heavy")
LIFT_HEIGHTS = ("low", "high")

# observation layout
EE_X, EE_Y, GRIP, OBJ_X, OBJ_Y, SIN_YAW, COS_YAW, UPRIGHT, CRUSH, DROPPED = range(10)


@dataclass(frozen=True)
class BehaviorFeatures:
    first_contact_region: str = "none"
    grasp_succeeded: bool = False
    toppled: bool = False
    crush_level: str = "none"
    dropped: bool = False
    lift_height: str = "low"

    def __post_init__(self):
        if self.first_contact_region not in REGIONS:
            raise ConfigurationError(f"unknown region {self.first_contact_region!r}")
        if self.crush_level not in CRUSH_LEVELS:
            raise ConfigurationError(f"unknown crush level {self.crush_level!r}")
        if self.lift_height not in LIFT_HEIGHTS:
            raise ConfigurationError(f"unknown lift height {self.lift_height!r}")
        for name in ("grasp_succeeded", "toppled", "dropped"):
            if not isinstance(getattr(self, name), (bool, np.bool_)):
                raise ConfigurationError(f"{name} must be a bool")
            object.__setattr__(self, name, bool(getattr(self, name)))

    @property
    def is_consistent(self):
        """Physical consistency (not enforced: the grammar covers every tuple)."""
        if not self.grasp_succeeded and self.dropped:
            return False
        if self.toppled and self.grasp_succeeded:
            return False
        return True

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown behavior fields: {sorted(unknown)}")
        return cls(**data)


def all_feature_tuples():
    """Every combination of field values, 6 * 2 * 2 * 3 * 2 * 2 = 288 tuples."""
    for region, grasp, toppled, crush, dropped, lift in itertools.product(
        REGIONS, (False, True), (False, True), CRUSH_LEVELS, (False, True), LIFT_HEIGHTS
    ):
        yield BehaviorFeatures(region, grasp, toppled, crush, dropped, lift)


_NOUN = {"handle": "cup", "rim": "cup", "interior": "cup", "edge": "bag", "middle": "bag"}
_LIFT = {"high": "lifts it", "low": "keeps it low"}
_TOPPLE = {False: " without toppling", True: " and topples it"}
_CRUSH = {"none": "", "light": " while lightly squeezing it", "heavy": " while crushing it"}
_DROP = {False: "", True: " before dropping it"}

GRAMMAR = [
    "the gripper {contact} and {lift}{topple}{crush}{drop}",
    "contact: grasps the {noun} by the {region} | touches the {noun} at the {region} but fails "
    "to hold it | grasps the object without a clear contact region | fails to grasp the object",
    "noun: cup (handle, rim, interior) | bag (edge, middle)",
    "lift: lifts it | keeps it low",
    "topple: ' without toppling' | ' and topples it'",
    "crush: '' | ' while lightly squeezing it' | ' while crushing it'",
    "drop: '' | ' before dropping it'",
]


def _contact_phrase(region, grasp):
    if region == "none":
        return "grasps the object without a clear contact region" if grasp else "fails to grasp the object"
    noun = _NOUN[region]
    if grasp:
        return f"grasps the {noun} by the {region}"
    return f"touches the {noun} at the {region} but fails to hold it"


def render(features):
    f = features
    return (
        f"the gripper {_contact_phrase(f.first_contact_region, f.grasp_succeeded)} and "
        f"{_LIFT[f.lift_height]}{_TOPPLE[f.toppled]}{_CRUSH[f.crush_level]}{_DROP[f.dropped]}"
    )


def normalize_text(text):
    text = re.sub(r"\s+", " ", str(text).strip().lower())
    return text.rstrip(".").strip()


_PARSE_TABLE = {render(f): f for f in all_feature_tuples()}


def parse(text):
    """Invert :func:`render`. Raises ``ValueError`` on text outside the grammar."""
    try:
        return _PARSE_TABLE[normalize_text(text)]
    except KeyError:
        raise ValueError(f"text is not in the narration grammar: {text!r}") from None


def try_parse(text):
    try:
        return parse(text)
    except ValueError:
        return None


@dataclass(frozen=True)
class Narration:
    features: BehaviorFeatures
    text: str

    @classmethod
    def from_features(cls, features):
        return cls(features, render(features))

    @classmethod
    def from_text(cls, text):
        features = parse(text)
        return cls(features, render(features))


@dataclass(frozen=True)
class FeatureConfig:
    """Thresholds for event detection on (possibly decoded) observation channels."""

    object_kind: object = CUP
    grip_threshold: float = GRIP_CLOSE_THRESHOLD
    detect_radius: float = 0.03
    upright_threshold: float = 0.5
    lift_min: float = 0.05
    high_y: float = HIGH_Y
    crush_light: float = 0.1
    crush_heavy: float = 0.4
    dropped_threshold: float = 0.5

    @classmethod
    def for_task(cls, task, **overrides):
        return cls(object_kind=get_object_kind(task), **overrides)


def crush_level(value, config=FeatureConfig()):
    if value >= config.crush_heavy:
        return "heavy"
    if value >= config.crush_light:
        return "light"
    return "none"


def _closing_index(grip, threshold):
    was_open = False
    for i, g in enumerate(grip):
        if g >= threshold:
            was_open = True
        elif was_open:
            return i
    return None


def extract_features(decoded, config=None):
    """Detect behavior events in a sequence of observations.

    Contact is read at the first open-to-closed gripper transition: the nearest
    grasp anchor (in the object frame), kept if it lies within ``detect_radius``
    of the gripper or if the object rises after the closing frame.
    A topple is an upright-to-fallen transition, so sequences that never show
    the object upright report no topple.
    """
    if config is None:
        config = FeatureConfig()
    obs = check_observations(decoded, name="decoded")
    kind = config.object_kind

    upright = obs[:, UPRIGHT] >= config.upright_threshold
    toppled = False
    if upright.any():
        first_up = int(np.argmax(upright))
        toppled = bool((~upright[first_up:]).any())

    region = "none"
    lifted = False
    idx = _closing_index(obs[:, GRIP], config.grip_threshold)
    if idx is not None:
        frame = obs[idx]
        yaw = np.arctan2(frame[SIN_YAW], frame[COS_YAW])
        ee = frame[[EE_X, EE_Y]]
        obj = frame[[OBJ_X, OBJ_Y]]
        best, best_dist = None, np.inf
        for name, anchor in kind.anchors.items():
            dist = float(np.linalg.norm(ee - (obj + rotate(anchor, yaw))))
            if dist < best_dist:
                best, best_dist = name, dist
        lifted = float(obs[idx:, OBJ_Y].max() - frame[OBJ_Y]) > config.lift_min
        # a lifted object was necessarily captured, and capture takes the nearest anchor
        if best_dist < config.detect_radius or lifted:
            region = best

    grasp = region != "none" and not toppled and lifted
    dropped = grasp and bool((obs[:, DROPPED] >= config.dropped_threshold).any())
    return BehaviorFeatures(
        first_contact_region=region,
        grasp_succeeded=grasp,
        toppled=toppled,
        crush_level=crush_level(float(obs[:, CRUSH].max()), config),
        dropped=dropped,
        lift_height="high" if float(obs[:, OBJ_Y].max()) > config.high_y else "low",
    )
