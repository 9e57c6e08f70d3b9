"""Object geometry and contact constants for the planar scene.

Coordinates live in the unit square. ``x`` is lateral, ``y`` doubles as the
height proxy: objects rest at ``TABLE_Y`` and count as lifted high once they
pass ``HIGH_Y``. Grasp anchors are given in the object frame and rotated by
the object's yaw.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError

REGIONS = ("none", "handle", "rim", "interior", "edge", "middle")

TABLE_Y = 0.30
HIGH_Y = 0.50
GRIP_CLOSE_THRESHOLD = 0.5
MAX_STEP = 0.04


@dataclass(frozen=True)
class ObjectKind:
    name: str
    anchors: dict
    body_radius: float
    capture_radius: float = 0.025
    topples: bool = False
    topple_speed: float = 0.025
    drop_p: dict = field(default_factory=dict)
    crush_rate: dict = field(default_factory=dict)

    @property
    def regions(self):
        return tuple(self.anchors)

    def anchor_world(self, region, obj_pos, obj_yaw):
        return np.asarray(obj_pos, dtype=np.float64) + rotate(self.anchors[region], obj_yaw)


def rotate(vec, angle):
    c, s = np.cos(angle), np.sin(angle)
    x, y = vec
    return np.array([c * x - s * y, s * x + c * y])


CUP = ObjectKind(
    name="cup",
    anchors={"handle": (0.08, 0.0), "rim": (-0.04, 0.05), "interior": (0.0, 0.01)},
    body_radius=0.05,
    topples=True,
    drop_p={"handle": 0.0, "rim": 0.0, "interior": 0.0},
    crush_rate={"handle": 0.0, "rim": 0.0, "interior": 0.0},
)

BAG = ObjectKind(
    name="bag",
    anchors={"edge": (0.0, 0.05), "middle": (0.0, 0.0)},
    body_radius=0.06,
    topples=False,
    drop_p={"edge": 0.4, "middle": 0.0},
    crush_rate={"edge": 0.0, "middle": 0.02},
)

OBJECT_KINDS = {"cup": CUP, "bag": BAG}


def get_object_kind(task):
    """Look up the object kind for a task family id (``"cup"`` or ``"bag"``)."""
    family = task.split("-")[0] if isinstance(task, str) else task
    try:
        return OBJECT_KINDS[family]
    except KeyError:
        raise ConfigurationError(
            f"unknown task family {task!r}; expected one of {sorted(OBJECT_KINDS)}"
        ) from None
