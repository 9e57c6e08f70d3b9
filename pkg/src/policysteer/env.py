"""Planar pick-up simulator with region-based grasping and a scripted demonstrator.

The simulator is a pure function of ``(state, action, seed)``. Contact is
resolved with threshold rules only: closing the gripper near a grasp anchor
holds the object by that region, fast contact with an unheld cup topples it,
squeezing a bag's middle accumulates crush, and loosening the grip while the
object is high may let it slip.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_actions, check_positive_int
from .exceptions import ConfigurationError
from .narration import BehaviorFeatures, FeatureConfig, extract_features
from .objects import GRIP_CLOSE_THRESHOLD, HIGH_Y, MAX_STEP, REGIONS, TABLE_Y, get_object_kind

EPISODE_HORIZON = 140
PLAN_HORIZON = 64

# scripted timeline (in steps)
APPROACH_STEPS = 28
WAYPOINT_STEPS = 16
CLOSE_STEPS = 4
LIFT_STEPS = 24
LIFT_HEIGHT = 0.30
LOOSEN_GRIP = 0.3

AIM_NOISE = 0.004
STEP_NOISE = 0.0015

TASK_MODES = {"cup": ("handle", "rim", "interior"), "bag": ("edge", "middle")}

# pre-grasp waypoint per mode, relative to the grasp anchor (world frame)
WAYPOINTS = {
    "handle": (0.10, 0.08),
    "rim": (-0.08, 0.10),
    "interior": (0.0, 0.12),
    "edge": (0.10, 0.06),
    "middle": (0.0, 0.12),
}


@dataclass(frozen=True)
class WorldState:
    ee_pos: tuple = (0.5, 0.75)
    ee_grip: float = 1.0
    obj_pos: tuple = (0.5, TABLE_Y)
    obj_yaw: float = 0.0
    obj_upright: bool = True
    crush: float = 0.0
    held_region: str = "none"
    dropped: bool = False
    kind: str = "cup"

    def __post_init__(self):
        if self.held_region not in REGIONS:
            raise ConfigurationError(f"unknown held_region {self.held_region!r}")
        get_object_kind(self.kind)

    def is_valid(self):
        inside = all(0.0 <= v <= 1.0 for v in (*self.ee_pos, *self.obj_pos))
        held_ok = self.held_region == "none" or self.ee_grip < GRIP_CLOSE_THRESHOLD
        return inside and 0.0 <= self.ee_grip <= 1.0 and 0.0 <= self.crush <= 1.0 and held_ok


def canonical_state(task="cup"):
    return WorldState(kind=get_object_kind(task).name)


def reset(task, rng_seed):
    """Randomized initial state: gripper start, object lateral position and yaw."""
    kind = get_object_kind(task)
    rng = np.random.default_rng(rng_seed)
    ee = (float(rng.uniform(0.45, 0.55)), float(rng.uniform(0.72, 0.78)))
    obj = (float(rng.uniform(0.42, 0.58)), TABLE_Y)
    yaw = float(rng.uniform(-0.25, 0.25))
    return WorldState(ee_pos=ee, obj_pos=obj, obj_yaw=yaw, kind=kind.name)


def clamp_action(action):
    a = np.asarray(action, dtype=np.float64)
    return np.array(
        [
            min(max(a[0], -MAX_STEP), MAX_STEP),
            min(max(a[1], -MAX_STEP), MAX_STEP),
            min(max(a[2], 0.0), 1.0),
        ]
    )


def _clip01(v):
    return min(max(float(v), 0.0), 1.0)


def step(state, action, rng_seed=0):
    """Advance the world by one action. Out-of-range actions are clamped."""
    kind = get_object_kind(state.kind)
    dx, dy, grip_cmd = clamp_action(action)
    ex, ey = _clip01(state.ee_pos[0] + dx), _clip01(state.ee_pos[1] + dy)
    old_grip, grip = state.ee_grip, float(grip_cmd)
    speed = float(np.hypot(ex - state.ee_pos[0], ey - state.ee_pos[1]))
    ox, oy = state.obj_pos
    yaw = state.obj_yaw
    upright, crush, held, dropped = state.obj_upright, state.crush, state.held_region, state.dropped

    if held == "none" and upright and kind.topples and grip >= GRIP_CLOSE_THRESHOLD:
        if np.hypot(ex - ox, ey - oy) < kind.body_radius and speed > kind.topple_speed:
            upright = False

    closing = old_grip >= GRIP_CLOSE_THRESHOLD > grip
    if held == "none" and closing and upright and not dropped:
        best, best_dist = "none", kind.capture_radius
        for region in kind.regions:
            ax, ay = kind.anchor_world(region, (ox, oy), yaw)
            dist = float(np.hypot(ex - ax, ey - ay))
            if dist < best_dist:
                best, best_dist = region, dist
        held = best

    if held != "none":
        if grip >= GRIP_CLOSE_THRESHOLD:
            if ey > HIGH_Y:
                dropped, oy = True, TABLE_Y
            held = "none"
        elif grip > old_grip and ey > HIGH_Y:
            if np.random.default_rng(rng_seed).random() < kind.drop_p.get(held, 0.0):
                dropped, oy, held = True, TABLE_Y, "none"
    if held != "none":
        ax, ay = kind.anchor_world(held, (0.0, 0.0), yaw)
        ox, oy = ex - ax, ey - ay
        crush = min(1.0, crush + kind.crush_rate.get(held, 0.0) * (1.0 - grip / GRIP_CLOSE_THRESHOLD))

    return WorldState(
        ee_pos=(ex, ey),
        ee_grip=grip,
        obj_pos=(_clip01(ox), _clip01(oy)),
        obj_yaw=yaw,
        obj_upright=upright,
        crush=crush,
        held_region=held,
        dropped=dropped,
        kind=state.kind,
    )


def observe(state):
    """Project a state to the 10-d observation vector."""
    return np.array(
        [
            state.ee_pos[0],
            state.ee_pos[1],
            state.ee_grip,
            state.obj_pos[0],
            state.obj_pos[1],
            np.sin(state.obj_yaw),
            np.cos(state.obj_yaw),
            1.0 if state.obj_upright else 0.0,
            state.crush,
            1.0 if state.dropped else 0.0,
        ]
    )


def step_seed(episode_seed, t):
    return (int(episode_seed) * 1_000_003 + int(t)) % (2**63)


def rollout(state, actions, episode_seed=0):
    """Execute ``actions`` open-loop; returns (observations of length n+1, final state)."""
    actions = check_actions(actions)
    obs = np.empty((len(actions) + 1, 10))
    obs[0] = observe(state)
    for t, a in enumerate(actions):
        state = step(state, a, step_seed(episode_seed, t))
        obs[t + 1] = observe(state)
    return obs, state


def scripted_actions(state, mode, rng=None, horizon=EPISODE_HORIZON, place=False):
    """Open-loop controller for one grasp mode, planned from the initial state.

    With ``rng`` the target is perturbed by a per-episode aim error and each
    moving step by small jitter; without it the script is noise-free.
    """
    kind = get_object_kind(state.kind)
    if mode not in kind.anchors:
        raise ConfigurationError(f"mode {mode!r} has no scripted controller for task {kind.name!r}")
    target = kind.anchor_world(mode, state.obj_pos, state.obj_yaw)
    if rng is not None:
        target = target + rng.normal(0.0, AIM_NOISE, size=2)
    start = np.asarray(state.ee_pos)
    waypoint = target + np.asarray(WAYPOINTS[mode])
    final_steps = APPROACH_STEPS - WAYPOINT_STEPS

    acts = np.zeros((horizon, 3))
    acts[:WAYPOINT_STEPS, :2] = (waypoint - start) / WAYPOINT_STEPS
    acts[WAYPOINT_STEPS:APPROACH_STEPS, :2] = (target - waypoint) / final_steps
    acts[:APPROACH_STEPS, 2] = 1.0
    t = APPROACH_STEPS
    t += CLOSE_STEPS  # zero motion, grip 0
    acts[t : t + LIFT_STEPS, 1] = LIFT_HEIGHT / LIFT_STEPS
    t += LIFT_STEPS
    if kind.name == "bag":
        acts[t : t + 4, 2] = LOOSEN_GRIP
    if place and horizon > PLAN_HORIZON + LIFT_STEPS + 4:
        t = PLAN_HORIZON
        acts[t : t + LIFT_STEPS, 1] = -LIFT_HEIGHT / LIFT_STEPS
        acts[t + LIFT_STEPS :, 2] = 1.0
    if rng is not None:
        moving = np.any(acts[:, :2] != 0.0, axis=1)
        acts[moving, :2] += rng.normal(0.0, STEP_NOISE, size=(int(moving.sum()), 2))
    return acts[:horizon]


@dataclass
class EpisodeRecord:
    observations: np.ndarray
    actions: np.ndarray
    behavior_label: BehaviorFeatures
    source: str
    task: str = "cup"
    mode_hint: str = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.source not in ("demo", "policy_rollout"):
            raise ConfigurationError(f"unknown episode source {self.source!r}")
        if len(self.observations) != len(self.actions) + 1:
            raise ConfigurationError("observations must be one longer than actions")

    def to_json(self):
        return json.dumps(
            {
                "task": self.task,
                "source": self.source,
                "mode_hint": self.mode_hint,
                "seed": self.seed,
                "behavior_label": self.behavior_label.to_dict(),
                "observations": _round_floats(self.observations),
                "actions": _round_floats(self.actions),
                "extra": self.extra,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(
            observations=np.array(d["observations"], dtype=np.float64),
            actions=np.array(d["actions"], dtype=np.float64),
            behavior_label=BehaviorFeatures.from_dict(d["behavior_label"]),
            source=d["source"],
            task=d.get("task", "cup"),
            mode_hint=d.get("mode_hint"),
            seed=d.get("seed", 0),
            extra=d.get("extra", {}),
        )


def _round_floats(arr):
    return [[float(f"{v:.9g}") for v in row] for row in np.asarray(arr).tolist()]


def write_episodes(path, episodes):
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(ep.to_json())
            fh.write("\n")


def read_episodes(path):
    with open(path, encoding="utf-8") as fh:
        return [EpisodeRecord.from_json(line) for line in fh if line.strip()]


def episode_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def make_episode(task, state, actions, source, seed, mode_hint=None, extra=None):
    obs, _ = rollout(state, actions, seed)
    label = extract_features(obs, FeatureConfig.for_task(task))
    return EpisodeRecord(obs, np.asarray(actions), label, source, task, mode_hint, int(seed), extra or {})


def generate_demos(task, n_per_mode, modes, rng_seed, place=False, horizon=EPISODE_HORIZON):
    """Scripted demonstrations, ``n_per_mode`` per mode, in mode order.

    Episode ``i`` draws its initial state and controller noise from
    ``(rng_seed, i)`` only, so the set is independent of generation order.
    """
    kind = get_object_kind(task)
    n_per_mode = check_positive_int(n_per_mode, "n_per_mode", minimum=0)
    modes = list(modes)
    if not modes:
        raise ConfigurationError("modes must be nonempty")
    for mode in modes:
        if mode not in kind.anchors:
            raise ConfigurationError(f"unknown mode {mode!r} for task {kind.name!r}")
    episodes = []
    for m, mode in enumerate(modes):
        for i in range(n_per_mode):
            index = m * n_per_mode + i
            rng = episode_rng(rng_seed, index)
            state = reset(kind.name, int(rng.integers(2**31)))
            acts = scripted_actions(state, mode, rng, horizon=horizon, place=place)
            seed = step_seed(rng_seed, index) % (2**31)
            episodes.append(make_episode(kind.name, state, acts, "demo", seed, mode_hint=mode))
    return episodes


def initial_state_for(episode):
    """Recover the initial world state of a recorded episode from its first observation."""
    o = episode.observations[0]
    return WorldState(
        ee_pos=(float(o[0]), float(o[1])),
        ee_grip=float(o[2]),
        obj_pos=(float(o[3]), float(o[4])),
        obj_yaw=float(np.arctan2(o[5], o[6])),
        obj_upright=bool(o[7] >= 0.5),
        crush=float(o[8]),
        dropped=bool(o[9] >= 0.5),
        kind=get_object_kind(episode.task).name,
    )


def hold_actions(n, grip):
    acts = np.zeros((n, 3))
    acts[:, 2] = grip
    return acts


def extend_plan(plan_actions, horizon=EPISODE_HORIZON):
    """Pad a T-step plan to the episode horizon by holding the last grip command."""
    plan_actions = np.asarray(plan_actions)
    if len(plan_actions) >= horizon:
        return plan_actions[:horizon]
    return np.vstack([plan_actions, hold_actions(horizon - len(plan_actions), plan_actions[-1, 2])])


__all__ = [
    "EPISODE_HORIZON",
    "PLAN_HORIZON",
    "TASK_MODES",
    "WorldState",
    "EpisodeRecord",
    "canonical_state",
    "reset",
    "step",
    "observe",
    "rollout",
    "scripted_actions",
    "generate_demos",
    "make_episode",
    "write_episodes",
    "read_episodes",
    "initial_state_for",
    "extend_plan",
]
