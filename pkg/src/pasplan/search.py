"""Propose, assess, search: beam-pruned breadth-first plan search."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .assessment import (
    ALL_COMPONENTS,
    DEFAULT_EPSILON,
    EMPTY_GRAPH,
    PRESETS,
    TaskGraph,
    ValueMask,
    ValueWeights,
    combine,
    generation_score,
    partial_plan_score,
    task_graph_score,
)
from .domain import (
    COMPONENTS,
    ActionId,
    ActionPlan,
    AdmissibleActionSet,
    PlanningQuery,
    ProposalCandidate,
    SearchNode,
    Setup,
    Step,
    ValueBreakdown,
    plan_from_node,
)
from .errors import ConfigError, GroundingError, OracleRefusal, SearchError
from .grounding import VocabularyIndex
from .proposer import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    DEFAULT_TOP_LOGPROBS,
    Backend,
    Example,
    build_next_action_prompt,
    build_plan_evaluation_prompt,
    evaluate_yes_no,
    sample_candidates,
)

log = logging.getLogger(__name__)

AGGREGATIONS = ("sum", "last-step")
NEUTRAL_PARTIAL_PLAN = 0.5  # recorded when the partial-plan evaluator is masked out


@dataclass(frozen=True)
class SearchConfig:
    k_samples: int = 10
    beam_width: int = 3
    horizon: Optional[int] = None  # None: use the query's horizon
    path_aggregation: str = "sum"
    seed: int = 0
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    top_logprobs: int = DEFAULT_TOP_LOGPROBS
    repetition_control: bool = True
    epsilon: float = DEFAULT_EPSILON
    workers: int = 1

    def __post_init__(self):
        if self.k_samples < 1:
            raise ConfigError(f"k_samples must be >= 1, got {self.k_samples}")
        if not 1 <= self.beam_width <= self.k_samples:
            raise ConfigError(f"beam width must lie in [1, K={self.k_samples}], got {self.beam_width}")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.path_aggregation not in AGGREGATIONS:
            raise ConfigError(f"path_aggregation must be one of {AGGREGATIONS}")


@dataclass
class Backends:
    """Everything a search needs besides the query and the knobs."""

    llm: Backend
    index: VocabularyIndex
    graph: TaskGraph = EMPTY_GRAPH
    examples: Sequence[Example] = ()
    weights: ValueWeights = PRESETS["vpa"]
    mask: ValueMask = ALL_COMPONENTS
    shot_limit: Optional[int] = None

    @property
    def vocab(self) -> AdmissibleActionSet:
        return self.index.vocab

    @property
    def effective_weights(self) -> ValueWeights:
        w = self.weights.masked(self.mask)
        if self.graph.is_empty:
            w = ValueWeights(w.generation, w.mapping, 0.0, w.partial_plan)
        return w

    @property
    def enabled_components(self) -> tuple[str, ...]:
        return tuple(c for c in COMPONENTS if c in self.mask and not (c == "TG" and self.graph.is_empty))


@dataclass
class TraceEntry:
    node_id: str
    parent_id: Optional[str]
    depth: int
    action: ActionId
    description: str
    raw_texts: tuple[str, ...]
    values: ValueBreakdown
    step_value: float
    path_value: float
    kept: bool = False

    def to_record(self) -> dict:
        return {
            "node_id": self.node_id,
            "parent_id": self.parent_id,
            "depth": self.depth,
            "action": self.action,
            "description": self.description,
            "raw_texts": list(self.raw_texts),
            "values": self.values.as_dict(),
            "step_value": self.step_value,
            "path_value": self.path_value,
            "kept": self.kept,
        }

    @classmethod
    def from_record(cls, r: dict) -> "TraceEntry":
        return cls(
            r["node_id"],
            r["parent_id"],
            int(r["depth"]),
            int(r["action"]),
            r["description"],
            tuple(r["raw_texts"]),
            ValueBreakdown.from_dict(r["values"]),
            float(r["step_value"]),
            float(r["path_value"]),
            bool(r["kept"]),
        )


@dataclass
class Rejection:
    parent_id: Optional[str]
    depth: int
    raw_text: str
    reason: str

    def to_record(self) -> dict:
        return {"parent_id": self.parent_id, "depth": self.depth, "raw_text": self.raw_text, "reason": self.reason}

    @classmethod
    def from_record(cls, r: dict) -> "Rejection":
        return cls(r["parent_id"], int(r["depth"]), r["raw_text"], r["reason"])


@dataclass
class SearchTrace:
    sample_id: str = ""
    depths: list[list[TraceEntry]] = field(default_factory=list)
    rejected: list[Rejection] = field(default_factory=list)
    proposal_calls: int = 0
    best_node_id: Optional[str] = None

    def kept(self, depth: int) -> list[TraceEntry]:
        return [e for e in self.depths[depth - 1] if e.kept]

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "best_node_id": self.best_node_id,
            "proposal_calls": self.proposal_calls,
            "depths": [[e.to_record() for e in level] for level in self.depths],
            "rejected": [r.to_record() for r in self.rejected],
        }

    @classmethod
    def from_record(cls, r: dict) -> "SearchTrace":
        return cls(
            r.get("sample_id", ""),
            [[TraceEntry.from_record(e) for e in level] for level in r.get("depths", [])],
            [Rejection.from_record(x) for x in r.get("rejected", [])],
            int(r.get("proposal_calls", 0)),
            r.get("best_node_id"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    def render_text(self) -> str:
        """Indented tree of every expanded node; kept nodes are starred."""
        children: dict[Optional[str], list[TraceEntry]] = {}
        for level in self.depths:
            for e in level:
                children.setdefault(e.parent_id, []).append(e)
        lines = [f"search tree for {self.sample_id or '<query>'} (best: {self.best_node_id})"]

        def walk(pid, indent):
            for e in children.get(pid, []):
                v = e.values
                mark = "*" if e.kept else " "
                lines.append(
                    f"{'  ' * indent}{mark} [{e.node_id}] {e.description} "
                    f"(V={e.step_value:.4f} path={e.path_value:.4f} "
                    f"G={v.generation:.3f} M={v.mapping:.3f} TG={v.task_graph:.3g} P={v.partial_plan:.3f})"
                )
                walk(e.node_id, indent + 1)

        walk(None, 0)
        return "\n".join(lines)


def _rank_value(node: SearchNode, aggregation: str) -> float:
    return node.path_value if aggregation == "sum" else node.step_value


def rank_key(node: SearchNode, aggregation: str = "sum"):
    """Higher score first, then lower action id, then lower parent chain."""
    return (-_rank_value(node, aggregation), node.ancestry_key)


def task_graph_value(
    query: PlanningQuery, graph: TaskGraph, actions: Sequence[ActionId], epsilon: float = DEFAULT_EPSILON
) -> float:
    if graph.is_empty:
        return 0.0
    anchor = query.anchor
    if query.setup is Setup.PP and actions and actions[0] == anchor:
        # a plan opening with the observed start step restates it; no transition
        if len(actions) == 1:
            return 1.0
        return task_graph_score(graph, actions[1:], actions[0], epsilon)
    return task_graph_score(graph, actions, anchor, epsilon)


@dataclass
class _Child:
    candidate: ProposalCandidate
    raw_texts: list[str]


class _Expander:
    def __init__(self, query: PlanningQuery, config: SearchConfig, backends: Backends):
        self.q = query
        self.cfg = config
        self.b = backends
        self.weights = backends.effective_weights
        self.vocab = backends.vocab

    def evaluate(self, steps: Sequence[Step]) -> float:
        if self.weights.partial_plan == 0.0:
            return NEUTRAL_PARTIAL_PLAN
        prompt = build_plan_evaluation_prompt(self.q, steps, self.b.examples, self.b.shot_limit)
        yes, no = evaluate_yes_no(self.b.llm, prompt, self.cfg.top_logprobs)
        return partial_plan_score(yes, no)

    def expand(self, prefix: Sequence[Step]) -> tuple[list[_Child], list[tuple[str, str]]]:
        """Propose K continuations of ``prefix`` and score each distinct grounded action."""
        cfg = self.cfg
        prompt = build_next_action_prompt(self.q, prefix, self.b.examples, self.b.shot_limit)
        samples = sample_candidates(
            self.b.llm, prompt, cfg.k_samples, cfg.temperature, cfg.max_tokens, cfg.top_logprobs
        )
        prefix_ids = [s.action for s in prefix]
        rejected: list[tuple[str, str]] = []
        grounded_ok = 0
        best: dict[ActionId, _Child] = {}
        p_memo: dict[ActionId, float] = {}
        tg_memo: dict[ActionId, float] = {}
        for i, s in enumerate(samples):
            try:
                a, v_m = self.b.index.ground(s.text)
            except GroundingError as e:
                rejected.append((s.text, f"grounding: {e}"))
                continue
            grounded_ok += 1
            if (
                cfg.repetition_control
                and prefix_ids
                and a == prefix_ids[-1]
                and self.b.graph.count(a, a) == 0
            ):
                rejected.append((s.text, f"repeats previous step {a}"))
                continue
            if a not in p_memo:
                step = self.vocab.step(a)
                p_memo[a] = self.evaluate(list(prefix) + [step])
                tg_memo[a] = task_graph_value(self.q, self.b.graph, prefix_ids + [a], cfg.epsilon)
            v_g = generation_score(s.token_logprobs)
            v_p, v_tg = p_memo[a], tg_memo[a]
            combined = combine((v_g, v_m, v_tg, v_p), self.weights)
            cand = ProposalCandidate(s.text, s.token_logprobs, a, ValueBreakdown(v_g, v_m, v_p, v_tg, combined), i)
            prev = best.get(a)
            if prev is None:
                best[a] = _Child(cand, [s.text])
            else:
                prev.raw_texts.append(s.text)
                if combined > prev.candidate.values.combined:
                    prev.candidate = cand
        if grounded_ok == 0:
            raise SearchError(f"none of the {len(samples)} samples could be grounded")
        return [best[a] for a in sorted(best)], rejected


def plan(query: PlanningQuery, config: SearchConfig, backends: Backends) -> tuple[ActionPlan, SearchTrace]:
    """Beam search to the query horizon; returns the best plan and the full trace."""
    horizon = config.horizon or query.horizon
    if config.horizon is not None and config.horizon != query.horizon:
        raise ConfigError(f"config horizon {config.horizon} != query horizon {query.horizon}")
    agg = config.path_aggregation
    exp = _Expander(query, config, backends)
    trace = SearchTrace(sample_id=query.sample_id)
    ids: dict[SearchNode, str] = {}
    frontier: list[Optional[SearchNode]] = [None]

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for depth in range(1, horizon + 1):
            prefixes = [n.path_steps if n is not None else () for n in frontier]
            try:
                if pool is not None:
                    results = list(pool.map(exp.expand, prefixes))
                else:
                    results = [exp.expand(p) for p in prefixes]
            except SearchError as e:
                raise SearchError(f"depth {depth}: {e}", trace) from e
            trace.proposal_calls += len(prefixes)

            children: list[SearchNode] = []
            raw: dict[SearchNode, tuple[str, ...]] = {}
            for parent, (kids, rejected) in zip(frontier, results):
                pid = ids.get(parent) if parent is not None else None
                trace.rejected.extend(Rejection(pid, depth, t, r) for t, r in rejected)
                for kid in kids:
                    c = kid.candidate
                    step = exp.vocab.step(c.grounded)
                    v = c.values.combined
                    node = (
                        SearchNode.root(step, v, values=c.values)
                        if parent is None
                        else parent.child(step, v, values=c.values)
                    )
                    children.append(node)
                    raw[node] = tuple(kid.raw_texts)
            if not children:
                raise SearchError(f"depth {depth}: every proposal was rejected", trace)

            children.sort(key=lambda n: rank_key(n, agg))
            level = []
            for rank, node in enumerate(children):
                ids[node] = f"{depth}.{rank}"
                level.append(
                    TraceEntry(
                        ids[node],
                        ids.get(node.parent) if node.parent is not None else None,
                        depth,
                        node.action,
                        node.description,
                        raw[node],
                        node.values,
                        node.step_value,
                        node.path_value,
                        kept=rank < config.beam_width,
                    )
                )
            trace.depths.append(level)
            frontier = children[: config.beam_width]
    finally:
        if pool is not None:
            pool.shutdown()

    best = frontier[0]
    trace.best_node_id = ids[best]
    return plan_from_node(best, horizon), trace


StepScorer = Callable[[tuple[ActionId, ...], ActionId], float]


def exhaustive_oracle(
    query: PlanningQuery,
    scorer: StepScorer,
    vocab: AdmissibleActionSet,
    horizon: Optional[int] = None,
    aggregation: str = "sum",
    allowed: Optional[Callable[[tuple[ActionId, ...], ActionId], bool]] = None,
    max_paths: int = 10**6,
) -> ActionPlan:
    """Score every length-T sequence and return the best; ties go to the lexicographically smallest.

    ``scorer(prefix, action)`` returns the combined step value of appending
    ``action`` after ``prefix``. ``allowed`` filters out transitions the
    search would reject before scoring.
    """
    T = horizon or query.horizon
    C = len(vocab)
    if C**T > max_paths:
        raise OracleRefusal(f"{C}^{T} = {C**T} paths exceeds the enumeration budget of {max_paths}")
    best_plan: Optional[tuple[ActionId, ...]] = None
    best_score = float("-inf")

    def walk(prefix: tuple[ActionId, ...], total: float):
        nonlocal best_plan, best_score
        if len(prefix) == T:
            if best_plan is None or total > best_score:
                best_plan, best_score = prefix, total
            return
        for a in range(C):
            if allowed is not None and not allowed(prefix, a):
                continue
            v = scorer(prefix, a)
            walk(prefix + (a,), total + v if aggregation == "sum" else v)

    walk((), 0.0)
    if best_plan is None:
        raise OracleRefusal("no admissible path of the requested length")
    return ActionPlan.from_actions(best_plan, vocab)
