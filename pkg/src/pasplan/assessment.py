"""Value functions for scoring proposed actions and their weighted combination."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .domain import COMPONENTS, ActionId
from .errors import ConfigError, ContractViolation

DEFAULT_EPSILON = 1e-3


def generation_score(token_logprobs: Sequence[float]) -> float:
    """Mean token log-probability of a generated phrase, correctly rounded."""
    if len(token_logprobs) == 0:
        raise ContractViolation("generation score needs at least one token log-prob")
    if not all(math.isfinite(x) for x in token_logprobs):
        raise ContractViolation(f"non-finite token log-prob in {list(token_logprobs)}")
    return float(sum(map(Fraction, token_logprobs), Fraction(0)) / len(token_logprobs))


def partial_plan_score(yes_logit: float, no_logit: float) -> float:
    """Two-way softmax probability of YES over NO."""
    if not (math.isfinite(yes_logit) and math.isfinite(no_logit)):
        raise ContractViolation(f"non-finite YES/NO logits ({yes_logit}, {no_logit})")
    # 1 / (1 + e^(no - yes)), arranged so the exponent is never positive
    d = no_logit - yes_logit
    if d >= 0:
        return math.exp(-d) / (1.0 + math.exp(-d))
    return 1.0 / (1.0 + math.exp(d))


@dataclass(frozen=True)
class TaskGraph:
    """First-order transition counts collected from example plans."""

    counts: Mapping[tuple[ActionId, ActionId], int]
    row_totals: Mapping[ActionId, int]
    built_from: int = 0

    @property
    def is_empty(self) -> bool:
        return not self.counts

    def count(self, x: ActionId, y: ActionId) -> int:
        return self.counts.get((x, y), 0)

    def probability(self, y: ActionId, given: ActionId) -> float:
        """Unsmoothed G(y | given); 0.0 for an unseen predecessor."""
        total = self.row_totals.get(given, 0)
        if total == 0:
            return 0.0
        return self.counts.get((given, y), 0) / total

    def successors(self, x: ActionId) -> dict[ActionId, int]:
        return {b: c for (a, b), c in self.counts.items() if a == x}


EMPTY_GRAPH = TaskGraph({}, {}, 0)


def build_task_graph(example_plans: Iterable[Sequence[ActionId]]) -> TaskGraph:
    counts: Counter = Counter()
    n = 0
    for plan in example_plans:
        n += 1
        counts.update(zip(plan[:-1], plan[1:]))
    totals: Counter = Counter()
    for (x, _), c in counts.items():
        totals[x] += c
    return TaskGraph(dict(counts), dict(totals), n)


def task_graph_score(
    graph: TaskGraph,
    partial_plan: Sequence[ActionId],
    anchor: Optional[ActionId] = None,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """Product of transition probabilities along ``anchor -> plan[0] -> ... -> plan[-1]``.

    Missing transitions (zero count, unseen predecessor, or no anchor for
    the first step) contribute ``epsilon``. An empty graph scores 0.
    """
    if graph.is_empty:
        return 0.0
    if not partial_plan:
        raise ContractViolation("task graph score needs a nonempty partial plan")
    prev = anchor
    score = 1.0
    for a in partial_plan:
        p = graph.probability(a, prev) if prev is not None else 0.0
        score *= p if p > 0.0 else epsilon
        prev = a
    return score


@dataclass(frozen=True)
class ValueWeights:
    generation: float
    mapping: float
    task_graph: float
    partial_plan: float

    def __post_init__(self):
        for name in ("generation", "mapping", "task_graph", "partial_plan"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"weight {name} must be a finite non-negative number, got {v}")

    @classmethod
    def preset(cls, name: str) -> "ValueWeights":
        try:
            return PRESETS[name]
        except KeyError:
            raise ConfigError(f"unknown weight preset {name!r}; choose from {sorted(PRESETS)}")

    @classmethod
    def parse(cls, spec: str) -> "ValueWeights":
        """A preset name or four comma-separated numbers in G,M,TG,P order."""
        if spec in PRESETS:
            return PRESETS[spec]
        parts = [p for p in spec.split(",") if p.strip()]
        if len(parts) != 4:
            raise ConfigError(f"custom weights need 4 numbers (G,M,TG,P), got {spec!r}")
        g, m, tg, p = (float(x) for x in parts)
        return cls(g, m, tg, p)

    def masked(self, mask: "ValueMask") -> "ValueWeights":
        return ValueWeights(
            self.generation if "G" in mask else 0.0,
            self.mapping if "M" in mask else 0.0,
            self.task_graph if "TG" in mask else 0.0,
            self.partial_plan if "P" in mask else 0.0,
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.generation, self.mapping, self.task_graph, self.partial_plan)


PRESETS = {
    "vpa": ValueWeights(0.2, 0.1, 0.1, 0.7),
    "pp": ValueWeights(0.1, 0.1, 0.3, 0.5),
}


class ValueMask(frozenset):
    """Set of enabled value components drawn from {G, M, TG, P}."""

    def __new__(cls, components: Iterable[str] = COMPONENTS):
        comps = [c.strip().upper() for c in components if c.strip()]
        bad = [c for c in comps if c not in COMPONENTS]
        if bad:
            raise ConfigError(f"unknown value components {bad}; expected a subset of {COMPONENTS}")
        if not comps:
            raise ConfigError("a value mask enables at least one component")
        return super().__new__(cls, comps)

    @classmethod
    def parse(cls, spec: str) -> "ValueMask":
        return cls(spec.split(","))

    def label(self) -> str:
        return ",".join(c for c in COMPONENTS if c in self)

    def __repr__(self) -> str:
        return f"ValueMask({self.label()})"


ALL_COMPONENTS = ValueMask(COMPONENTS)

# Row order of the value-function ablation table: singles, then triples, then all four.
TABLE5_MASKS = tuple(
    ValueMask(m)
    for m in (
        ["G"],
        ["M"],
        ["TG"],
        ["P"],
        ["G", "M", "TG"],
        ["G", "M", "P"],
        ["G", "TG", "P"],
        ["G", "M", "TG", "P"],
    )
)


def combine(values: Sequence[float], weights: ValueWeights) -> float:
    """Weighted sum of (V_G, V_M, V_TG, V_P)."""
    g, m, tg, p = values
    w = weights
    return w.generation * g + w.mapping * m + w.task_graph * tg + w.partial_plan * p
