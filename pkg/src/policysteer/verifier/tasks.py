"""Task descriptions with machine-readable preference and forbid predicates."""

import json
from dataclasses import dataclass, field, fields

from ..exceptions import ConfigurationError
from ..narration import BehaviorFeatures

_FEATURE_FIELDS = {f.name for f in fields(BehaviorFeatures)}


@dataclass(frozen=True)
class Predicate:
    """``features.<field>`` equals ``value`` (or is one of ``value`` when it is a tuple)."""

    field: str
    value: object
    weight: float = 1.0

    def __post_init__(self):
        if self.field not in _FEATURE_FIELDS:
            raise ConfigurationError(f"unknown feature field {self.field!r}")
        if isinstance(self.value, list):
            object.__setattr__(self, "value", tuple(self.value))
        if not self.weight > 0:
            raise ConfigurationError(f"predicate weight must be positive, got {self.weight}")

    def holds(self, features):
        actual = getattr(features, self.field)
        if isinstance(self.value, tuple):
            return actual in self.value
        return actual == self.value

    def describe(self):
        if isinstance(self.value, tuple):
            return f"{self.field} in {{{', '.join(map(str, self.value))}}}"
        return f"{self.field}={self.value}"

    def to_dict(self):
        value = list(self.value) if isinstance(self.value, tuple) else self.value
        return {"field": self.field, "value": value, "weight": self.weight}


@dataclass(frozen=True)
class TaskSpec:
    id: str
    text: str
    prefer: tuple = field(default_factory=tuple)
    forbid: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "prefer", tuple(self.prefer))
        object.__setattr__(self, "forbid", tuple(self.forbid))
        if not self.prefer and not self.forbid:
            raise ConfigurationError(f"task {self.id!r} needs at least one prefer or forbid predicate")
        if "\n" in self.text:
            raise ConfigurationError("task text must be a single line")

    @property
    def family(self):
        return self.id.split("-")[0]

    def fired_forbids(self, features):
        return [p for p in self.forbid if p.holds(features)]

    def satisfied_prefers(self, features):
        return [p for p in self.prefer if p.holds(features)]

    def allows(self, features):
        """True iff no forbid predicate fires."""
        return not self.fired_forbids(features)

    def scaled(self, c):
        """Copy with every prefer weight multiplied by ``c``."""
        prefer = tuple(Predicate(p.field, p.value, p.weight * c) for p in self.prefer)
        return TaskSpec(self.id, self.text, prefer, self.forbid)

    def to_dict(self):
        return {
            "id": self.id,
            "text": self.text,
            "prefer": [p.to_dict() for p in self.prefer],
            "forbid": [p.to_dict() for p in self.forbid],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                d["id"],
                d["text"],
                tuple(Predicate(**p) for p in d.get("prefer", ())),
                tuple(Predicate(**p) for p in d.get("forbid", ())),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"invalid task description: {exc}") from exc

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


_GRASP_FAILURE = Predicate("grasp_succeeded", False)

BUILTIN_TASKS = {
    t.id: t
    for t in (
        TaskSpec(
            "cup-serve",
            "serve a cup of water to a guest; keep fingers off the rim and the inside of the cup",
            prefer=(Predicate("first_contact_region", "handle"),),
            forbid=(
                Predicate("first_contact_region", ("rim", "interior")),
                Predicate("toppled", True),
                _GRASP_FAILURE,
            ),
        ),
        TaskSpec(
            "cup-oil",
            "the handle of the cup is covered with oil; pick the cup up without touching the handle",
            prefer=(Predicate("first_contact_region", "rim"),),
            forbid=(
                Predicate("first_contact_region", "handle"),
                Predicate("toppled", True),
                _GRASP_FAILURE,
            ),
        ),
        TaskSpec(
            "bag-contact",
            "pick up the bag while touching its contents as little as possible",
            prefer=(Predicate("first_contact_region", "edge"),),
            forbid=(Predicate("crush_level", "heavy"), Predicate("dropped", True), _GRASP_FAILURE),
        ),
        TaskSpec(
            "bag-stable",
            "carry the bag securely without letting it slip",
            prefer=(Predicate("first_contact_region", "middle"),),
            forbid=(Predicate("dropped", True), _GRASP_FAILURE),
        ),
    )
}


def get_task(task):
    """Resolve a task id (or pass a ``TaskSpec`` through)."""
    if isinstance(task, TaskSpec):
        return task
    try:
        return BUILTIN_TASKS[task]
    except KeyError:
        raise ConfigurationError(f"unknown task {task!r}; expected one of {sorted(BUILTIN_TASKS)}") from None
