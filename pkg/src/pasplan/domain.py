"""Core data types: actions, queries, plans, value breakdowns and search nodes.

All types are frozen dataclasses so they can be shared freely between
concurrent search workers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .errors import ContractViolation

ActionId = int

_WS = re.compile(r"\s+")


def normalize_description(text: str) -> str:
    """Lowercase and collapse whitespace. Applied once at vocabulary load."""
    return _WS.sub(" ", text).strip().lower()


class Setup(str, Enum):
    VPA = "vpa"
    PP = "pp"


@dataclass(frozen=True)
class Action:
    index: ActionId
    description: str
    task_name: Optional[str] = None


class AdmissibleActionSet:
    """Ordered vocabulary of the C admissible actions.

    Indices are contiguous from 0 and descriptions are unique after
    normalization.
    """

    def __init__(self, actions: Iterable[Action], task_scope: Optional[str] = None):
        acts = []
        seen: dict[str, int] = {}
        for expected, a in enumerate(actions):
            if a.index != expected:
                raise ContractViolation(
                    f"action indices must be contiguous from 0; got {a.index} at position {expected}"
                )
            desc = normalize_description(a.description)
            if not desc:
                raise ContractViolation(f"action {a.index} has an empty description")
            if desc in seen:
                raise ContractViolation(
                    f"duplicate description {desc!r} for actions {seen[desc]} and {a.index}"
                )
            seen[desc] = a.index
            acts.append(Action(a.index, desc, a.task_name))
        self._actions: tuple[Action, ...] = tuple(acts)
        self._by_desc = seen
        self.task_scope = task_scope

    @classmethod
    def from_descriptions(cls, descriptions: Sequence[str], task_scope: Optional[str] = None):
        return cls((Action(i, d) for i, d in enumerate(descriptions)), task_scope)

    @property
    def actions(self) -> tuple[Action, ...]:
        return self._actions

    @property
    def descriptions(self) -> list[str]:
        return [a.description for a in self._actions]

    def __len__(self) -> int:
        return len(self._actions)

    def __iter__(self):
        return iter(self._actions)

    def __getitem__(self, index: ActionId) -> Action:
        return self._actions[index]

    def __contains__(self, index: object) -> bool:
        return isinstance(index, int) and 0 <= index < len(self._actions)

    def description(self, index: ActionId) -> str:
        return self._actions[index].description

    def index_of(self, description: str) -> ActionId:
        """Exact lookup by (normalized) description; KeyError when absent."""
        return self._by_desc[normalize_description(description)]

    def step(self, index: ActionId) -> "Step":
        if index not in self:
            raise ContractViolation(f"action {index} is outside a vocabulary of size {len(self)}")
        return Step(index, self._actions[index].description)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AdmissibleActionSet):
            return NotImplemented
        return self._actions == other._actions and self.task_scope == other.task_scope

    def __repr__(self) -> str:
        return f"AdmissibleActionSet(C={len(self)}, task_scope={self.task_scope!r})"


@dataclass(frozen=True)
class Step:
    """An action id paired with its text description."""

    action: ActionId
    description: str


class ObservationKind(str, Enum):
    HISTORY = "history"
    START_IMAGE_STEP = "start_image_step"


@dataclass(frozen=True)
class Observation:
    kind: ObservationKind
    steps: tuple[Step, ...] = ()

    def __post_init__(self):
        if self.kind is ObservationKind.START_IMAGE_STEP and len(self.steps) != 1:
            raise ContractViolation("a start_image_step observation holds exactly one step")

    @classmethod
    def history(cls, steps: Iterable[Step]) -> "Observation":
        return cls(ObservationKind.HISTORY, tuple(steps))

    @classmethod
    def start(cls, step: Step) -> "Observation":
        return cls(ObservationKind.START_IMAGE_STEP, (step,))

    @property
    def history_steps(self) -> tuple[Step, ...]:
        return self.steps if self.kind is ObservationKind.HISTORY else ()

    @property
    def start_step(self) -> Optional[Step]:
        return self.steps[0] if self.kind is ObservationKind.START_IMAGE_STEP else None

    @property
    def last_step(self) -> Optional[Step]:
        return self.steps[-1] if self.steps else None


class GoalKind(str, Enum):
    TEXT = "text"
    GOAL_IMAGE_STEP = "goal_image_step"


@dataclass(frozen=True)
class GoalSpec:
    kind: GoalKind
    text: Optional[str] = None
    goal_step: Optional[Step] = None

    def __post_init__(self):
        if self.kind is GoalKind.TEXT:
            if not self.text or self.goal_step is not None:
                raise ContractViolation("a text goal carries text and no goal step")
        elif self.goal_step is None or self.text is not None:
            raise ContractViolation("an image goal carries a goal step and no text")

    @classmethod
    def from_text(cls, text: str) -> "GoalSpec":
        return cls(GoalKind.TEXT, text=text)

    @classmethod
    def from_step(cls, step: Step) -> "GoalSpec":
        return cls(GoalKind.GOAL_IMAGE_STEP, goal_step=step)


@dataclass(frozen=True)
class PlanningQuery:
    observation: Observation
    goal: GoalSpec
    horizon: int
    task_name: str
    setup: Setup
    sample_id: str = ""

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractViolation(f"horizon must be >= 1, got {self.horizon}")
        if self.setup is Setup.PP:
            if self.observation.kind is not ObservationKind.START_IMAGE_STEP:
                raise ContractViolation("PP queries need a start_image_step observation")
            if self.goal.kind is not GoalKind.GOAL_IMAGE_STEP:
                raise ContractViolation("PP queries need a goal_image_step goal")
            if self.horizon < 2:
                raise ContractViolation("PP horizon must be >= 2 (start and end are outputs)")
        else:
            if self.observation.kind is not ObservationKind.HISTORY:
                raise ContractViolation("VPA queries need a history observation")
            if self.goal.kind is not GoalKind.TEXT:
                raise ContractViolation("VPA queries need a text goal")

    @property
    def anchor(self) -> Optional[ActionId]:
        """Action the first planned step is conditioned on by the task graph."""
        last = self.observation.last_step
        return last.action if last is not None else None


@dataclass(frozen=True)
class ActionPlan:
    steps: tuple[Step, ...]

    @property
    def actions(self) -> tuple[ActionId, ...]:
        return tuple(s.action for s in self.steps)

    @property
    def descriptions(self) -> tuple[str, ...]:
        return tuple(s.description for s in self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    @classmethod
    def from_actions(cls, actions: Iterable[ActionId], vocab: AdmissibleActionSet) -> "ActionPlan":
        return cls(tuple(vocab.step(a) for a in actions))


COMPONENTS = ("G", "M", "TG", "P")


@dataclass(frozen=True)
class ValueBreakdown:
    """The four value-function outputs for one candidate and their combination.

    generation <= 0, mapping in [-1, 1], partial_plan in (0, 1),
    task_graph in [0, 1].
    """

    generation: float
    mapping: float
    partial_plan: float
    task_graph: float
    combined: float

    def as_dict(self) -> dict[str, float]:
        return {
            "G": self.generation,
            "M": self.mapping,
            "TG": self.task_graph,
            "P": self.partial_plan,
            "combined": self.combined,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, float]) -> "ValueBreakdown":
        return cls(float(d["G"]), float(d["M"]), float(d["P"]), float(d["TG"]), float(d["combined"]))


@dataclass(frozen=True)
class ProposalCandidate:
    raw_text: str
    token_logprobs: tuple[float, ...]
    grounded: ActionId
    values: ValueBreakdown
    sample_index: int = 0

    def __post_init__(self):
        if not self.token_logprobs:
            raise ContractViolation("a proposal carries at least one token log-prob")


@dataclass(frozen=True, eq=False)
class SearchNode:
    depth: int
    action: ActionId
    description: str
    step_value: float
    path_value: float
    parent: Optional["SearchNode"] = None
    values: Optional[ValueBreakdown] = None
    raw_texts: tuple[str, ...] = field(default=())

    @classmethod
    def root(cls, step: Step, step_value: float, **kw) -> "SearchNode":
        return cls(1, step.action, step.description, step_value, step_value, None, **kw)

    def child(self, step: Step, step_value: float, **kw) -> "SearchNode":
        return SearchNode(
            self.depth + 1,
            step.action,
            step.description,
            step_value,
            self.path_value + step_value,
            self,
            **kw,
        )

    def lineage(self) -> list["SearchNode"]:
        """Nodes from the root down to (and including) this one."""
        out = []
        node: Optional[SearchNode] = self
        while node is not None:
            out.append(node)
            node = node.parent
        out.reverse()
        return out

    @property
    def path_actions(self) -> tuple[ActionId, ...]:
        return tuple(n.action for n in self.lineage())

    @property
    def path_steps(self) -> tuple[Step, ...]:
        return tuple(Step(n.action, n.description) for n in self.lineage())

    @property
    def ancestry_key(self) -> tuple[ActionId, ...]:
        """This action, then the parent's, then the grandparent's...: the tie-break chain."""
        out = []
        node: Optional[SearchNode] = self
        while node is not None:
            out.append(node.action)
            node = node.parent
        return tuple(out)


def plan_from_node(node: SearchNode, horizon: Optional[int] = None) -> ActionPlan:
    """Backtrack the root-to-node path into a chronological plan."""
    if horizon is not None and node.depth != horizon:
        raise ContractViolation(f"node depth {node.depth} does not match horizon {horizon}")
    return ActionPlan(node.path_steps)


def steps_from_ids(ids: Iterable[ActionId], vocab: AdmissibleActionSet) -> tuple[Step, ...]:
    return tuple(vocab.step(i) for i in ids)


def vocab_from_records(records: Iterable[Mapping]) -> AdmissibleActionSet:
    recs = sorted(records, key=lambda r: int(r["index"]))
    return AdmissibleActionSet(
        Action(int(r["index"]), str(r["description"]), r.get("task_name")) for r in recs
    )
