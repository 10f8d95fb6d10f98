"""Synthetic procedural worlds and a noisy oracle language model.

The oracle reads the same prompts the planner renders (via
``proposer.parse_prompt``) so that templates are exercised end to end
without a real model.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

from .domain import (
    ActionPlan,
    AdmissibleActionSet,
    GoalSpec,
    Observation,
    PlanningQuery,
    Setup,
    steps_from_ids,
)
from .errors import ConfigError
from .proposer import NO, YES, BackendSample, _seeded_rng, parse_prompt

VERBS = (
    "add", "attach", "check", "clean", "cut", "fold", "heat", "insert", "lift", "loosen",
    "measure", "mix", "open", "place", "pour", "press", "remove", "rinse", "screw", "tighten",
)
NOUNS = (
    "bolt", "bowl", "cap", "cable", "cover", "filter", "frame", "handle", "hinge", "lid",
    "nut", "panel", "pipe", "plate", "screw", "sheet", "tray", "tube", "valve", "wheel",
)
SUBJECTS = ("bicycle", "shelf", "faucet", "printer", "lamp", "drawer", "window", "engine", "fan", "table")

CANONICAL_PROB = 0.7
# share of the noise level that becomes persistent knowledge gaps in the oracle
KNOWLEDGE_GAP = 0.25


@dataclass(frozen=True, eq=False)
class SimTask:
    goal: str
    plan: tuple[int, ...]
    # chain state -> {successor: probability}; every other state is uniform
    transitions: dict


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    vocab: AdmissibleActionSet
    tasks: tuple[SimTask, ...]
    noise: float = 0.0
    branching: int = 1
    seed: int = 0

    @property
    def n_actions(self) -> int:
        return len(self.vocab)

    def transition(self, task: int, prev: Optional[int], nxt: int) -> float:
        """True-graph probability of ``nxt`` following ``prev`` (``None``: plan start)."""
        return self.next_distribution(task, prev)[nxt]

    def next_distribution(self, task: int, prev: Optional[int]) -> tuple[float, ...]:
        return _next_distribution(self, task, prev)

    def likelihood(self, task: int, anchor: Optional[int], plan: Sequence[int]) -> float:
        p = 1.0
        prev = anchor
        for a in plan:
            p *= self.transition(task, prev, a)
            prev = a
        return p

    def with_noise(self, noise: float) -> "SyntheticWorld":
        return SyntheticWorld(self.vocab, self.tasks, noise, self.branching, self.seed)

    def task_index(self, goal: str) -> int:
        return _goal_index(self)[goal]


@lru_cache(maxsize=None)
def _goal_index(world: SyntheticWorld) -> dict:
    return {t.goal: i for i, t in enumerate(world.tasks)}


@lru_cache(maxsize=65536)
def _next_distribution(world: SyntheticWorld, task: int, prev: Optional[int]) -> tuple[float, ...]:
    C = world.n_actions
    t = world.tasks[task]
    if prev is None:
        succ = {t.plan[0]: 1.0}
    else:
        succ = t.transitions.get(prev)
    if succ is None:
        return (1.0 / C,) * C
    return tuple(succ.get(a, 0.0) for a in range(C))


def _action_names(rng: random.Random, C: int) -> list[str]:
    combos = [f"{v} the {n}" for v in VERBS for n in NOUNS]
    if C > len(combos):
        raise ConfigError(f"at most {len(combos)} synthetic actions are available, asked for {C}")
    rng.shuffle(combos)
    return combos[:C]


def generate_world(
    seed: int,
    C: int,
    branching: int,
    horizon_range: tuple[int, int] = (5, 8),
    n_tasks: int = 4,
    noise: float = 0.0,
    canonical_prob: float = CANONICAL_PROB,
) -> SyntheticWorld:
    """Reproducible world of ``n_tasks`` procedures over ``C`` actions.

    Each task has a canonical plan (a chain of distinct actions). From a
    chain state the canonical successor has probability ``canonical_prob``
    and ``branching - 1`` distractors share the rest; off-chain states
    transition uniformly. With ``branching == 1`` the chain is deterministic.
    """
    if C < 2:
        raise ConfigError(f"need at least 2 actions, got {C}")
    if not 1 <= branching <= C:
        raise ConfigError(f"branching must lie in [1, C={C}], got {branching}")
    lo, hi = horizon_range
    if not 1 <= lo <= hi <= C:
        raise ConfigError(f"horizon range {horizon_range} must satisfy 1 <= lo <= hi <= C={C}")
    if not 0.0 <= noise <= 1.0:
        raise ConfigError(f"noise must lie in [0, 1], got {noise}")
    p_c = 1.0 if branching == 1 else canonical_prob
    rng = random.Random(seed)
    vocab = AdmissibleActionSet.from_descriptions(_action_names(rng, C))
    subjects = list(SUBJECTS)
    rng.shuffle(subjects)
    tasks = []
    for i in range(n_tasks):
        length = rng.randint(lo, hi)
        plan = tuple(rng.sample(range(C), length))
        trans = {}
        for x, y in zip(plan[:-1], plan[1:]):
            others = [a for a in range(C) if a != y]
            distractors = rng.sample(others, branching - 1)
            row = {y: p_c}
            for d in distractors:
                row[d] = (1.0 - p_c) / (branching - 1)
            trans[x] = row
        goal = f"service the {subjects[i % len(subjects)]} {i}"
        tasks.append(SimTask(goal, plan, trans))
    world = SyntheticWorld(vocab, tuple(tasks), noise, branching, seed)
    _check_canonical_dominance(world)
    return world


def _check_canonical_dominance(world: SyntheticWorld) -> None:
    """Every canonical transition must beat every other transition in its task graph.

    Each value component is non-decreasing in each transition probability,
    so this makes the canonical plan the unique top-scoring path at zero
    noise.
    """
    C = world.n_actions
    for ti, t in enumerate(world.tasks):
        canon = [world.transition(ti, x, y) for x, y in zip(t.plan[:-1], t.plan[1:])]
        if not canon:
            continue
        lowest = min(canon)
        for x in range(C):
            dist = world.next_distribution(ti, x)
            for y, p in enumerate(dist):
                on_chain = x in t.transitions and y == t.plan[t.plan.index(x) + 1]
                if not on_chain and p >= lowest:
                    raise AssertionError(f"task {ti}: transition {x}->{y} ({p}) rivals the canonical chain")


def make_queries(
    world: SyntheticWorld,
    n: int,
    horizon: int,
    seed: int = 0,
    setup: Setup = Setup.VPA,
) -> list[tuple[PlanningQuery, ActionPlan]]:
    """Random (query, ground truth) pairs cut from the canonical plans."""
    rng = random.Random(f"queries:{world.seed}:{seed}:{horizon}:{setup.value}")
    vocab = world.vocab
    out = []
    eligible = [
        i for i, t in enumerate(world.tasks)
        if len(t.plan) >= (horizon + 1 if setup is Setup.VPA else horizon)
    ]
    if not eligible:
        raise ConfigError(f"no task plan is long enough for horizon {horizon}")
    for q in range(n):
        ti = rng.choice(eligible)
        t = world.tasks[ti]
        if setup is Setup.VPA:
            cut = rng.randint(1, len(t.plan) - horizon)
            gt = t.plan[cut : cut + horizon]
            query = PlanningQuery(
                Observation.history(steps_from_ids(t.plan[:cut], vocab)),
                GoalSpec.from_text(t.goal),
                horizon,
                t.goal,
                setup,
                f"w{world.seed}-q{q}",
            )
        else:
            i = rng.randint(0, len(t.plan) - horizon)
            gt = t.plan[i : i + horizon]
            query = PlanningQuery(
                Observation.start(vocab.step(gt[0])),
                GoalSpec.from_step(vocab.step(gt[-1])),
                horizon,
                t.goal,
                setup,
                f"w{world.seed}-q{q}",
            )
        out.append((query, ActionPlan.from_actions(gt, vocab)))
    return out


def world_dataset(world: SyntheticWorld, train_copies: int = 1):
    """Annotations holding each canonical plan once in the test split and ``train_copies`` times in train."""
    from .datasets import AnnotatedStep, Annotation
    from .evaluation import Dataset

    anns = []
    for i, t in enumerate(world.tasks):
        steps = tuple(AnnotatedStep(a, float(j), float(j) + 1.0) for j, a in enumerate(t.plan))
        anns += [Annotation(f"w{world.seed}t{i}train{c}", t.goal, t.goal, steps, "train") for c in range(train_copies)]
        anns.append(Annotation(f"w{world.seed}t{i}", t.goal, t.goal, steps, "test"))
    return Dataset(world.vocab, anns)


class OracleBackend:
    """Simulated language model backed by the world's true transition graph.

    The oracle believes the true graph except for knowledge gaps: each
    (task, state) row is forgotten (treated as uniform) with probability
    ``noise * KNOWLEDGE_GAP``, persistently. Next-action samples come from
    ``(1 - noise) * belief + noise * uniform`` and every token carries the
    log of that sampling probability. A YES/NO evaluation answers YES with
    the product of per-transition plausibilities (each relative to the most
    likely successor), where each factor is independently replaced by a
    uniform draw with probability ``noise``. Randomness is seeded by
    ``(seed, prompt)`` so repeated prompts get repeated answers.
    """

    def __init__(self, world: SyntheticWorld, noise: Optional[float] = None, seed: int = 0):
        self.world = world
        self.noise = world.noise if noise is None else noise
        self.seed = seed
        self._ids = {a.description: a.index for a in world.vocab}

    def _resolve(self, parsed) -> tuple[int, Optional[int], list[int], Optional[int]]:
        """(task, history anchor, plan ids, pp start step)."""
        ids = self._ids
        plan = [ids[d] for d in parsed.plan]
        if parsed.goal_text is not None:
            task = self.world.task_index(parsed.goal_text)
            anchor = ids[parsed.observed[-1]] if parsed.observed else None
            return task, anchor, plan, None
        start, goal = ids[parsed.start], ids[parsed.goal_step]
        # in-context examples come from the query's task, which disambiguates shared steps
        known = _goal_index(self.world)
        for ex_goal, _ in parsed.examples:
            if ex_goal in known:
                return known[ex_goal], None, plan, start
        return self._match_pp(start, goal), None, plan, start

    @lru_cache(maxsize=4096)
    def _match_pp(self, start: int, goal: int) -> int:
        for i, t in enumerate(self.world.tasks):
            if start in t.plan and goal in t.plan and t.plan.index(start) <= t.plan.index(goal):
                return i
        return 0

    @lru_cache(maxsize=4096)
    def _pp_first(self, start: int) -> tuple[float, ...]:
        # a procedural plan opens with the observed start step
        C = self.world.n_actions
        dist = [(1.0 - CANONICAL_PROB) / (C - 1)] * C
        dist[start] = CANONICAL_PROB
        return tuple(dist)

    @lru_cache(maxsize=65536)
    def _belief(self, task: int, prev: Optional[int], start: Optional[int]) -> tuple[float, ...]:
        """The oracle's view of what follows ``prev``; some rows are forgotten (uniform)."""
        if prev is None and start is not None:
            dist = self._pp_first(start)
        else:
            dist = self.world.next_distribution(task, prev)
        gap = _seeded_rng(self.seed, "gap", task, prev, start).random() < self.noise * KNOWLEDGE_GAP
        if gap:
            return (1.0 / len(dist),) * len(dist)
        return dist

    def _judgement(self, task: int, prev: Optional[int], nxt: int, start: Optional[int]) -> float:
        """Plausibility of one transition relative to the best transition from ``prev``."""
        dist = self._belief(task, prev, start)
        return dist[nxt] / max(dist)

    def _plan_judgement(
        self, rng: random.Random, task: int, anchor: Optional[int], plan: list[int], start: Optional[int]
    ) -> float:
        """Product of per-transition judgements, each replaced by a uniform draw with probability ``noise``."""
        q = 1.0
        prev = anchor
        for i, a in enumerate(plan):
            if rng.random() < self.noise:
                q *= rng.random()
            else:
                q *= self._judgement(task, prev, a, start if i == 0 else None)
            prev = a
        return q

    def complete(self, prompt, *, n, temperature, max_tokens, logprobs):
        parsed = parse_prompt(prompt)
        rng = _seeded_rng(self.seed, prompt)
        task, anchor, plan, start = self._resolve(parsed)
        w = self.world
        if parsed.kind == "next_action":
            if plan:
                dist = self._belief(task, plan[-1], None)
            else:
                dist = self._belief(task, anchor, start)
            C = w.n_actions
            mix = [(1.0 - self.noise) * p + self.noise / C for p in dist]
            picks = rng.choices(range(C), weights=mix, k=n)
            out = []
            for a in picks:
                text = w.vocab.description(a)
                lp = math.log(mix[a])
                out.append(BackendSample(text, (lp,) * len(text.split())))
            return out
        p = self._plan_judgement(rng, task, anchor, plan, start)
        p = min(max(p, 1e-9), 1.0 - 1e-9)
        return [BackendSample(YES, (math.log(p),), {YES: math.log(p), NO: math.log1p(-p)})]


@dataclass
class SweepPoint:
    params: dict
    sr: float
    macc: float
    miou: float
    n: int
    failed: int

    @property
    def se(self) -> float:
        return math.sqrt(self.sr * (1.0 - self.sr) / self.n) if self.n else 0.0

    def to_record(self) -> dict:
        return {**self.params, "sr": self.sr, "macc": self.macc, "miou": self.miou, "n": self.n,
                "failed": self.failed, "se": self.se}


def run_sweep(
    seeds: Sequence[int],
    n_actions: int,
    branching: int,
    noise: float,
    horizon: int,
    n_queries: int,
    beam_widths: Sequence[int] = (3,),
    k_samples: int = 10,
    setup: Setup = Setup.VPA,
    mask=None,
    weights=None,
    records_out: Optional[list] = None,
) -> list[SweepPoint]:
    """Paired-seed simulator sweep over beam widths; same worlds and queries for each width."""
    from .assessment import ALL_COMPONENTS, PRESETS
    from .evaluation import aggregate, evaluate_queries
    from .grounding import HashEmbedder, build_index
    from .search import Backends, SearchConfig

    worlds = []
    for s in seeds:
        w = generate_world(s, n_actions, branching, noise=noise)
        backends = Backends(
            OracleBackend(w, seed=s),
            build_index(w.vocab, HashEmbedder()),
            weights=weights or PRESETS[setup.value],
            mask=mask or ALL_COMPONENTS,
        )
        worlds.append((backends, make_queries(w, n_queries, horizon, seed=s, setup=setup)))
    points = []
    for kb in beam_widths:
        cfg = SearchConfig(k_samples=k_samples, beam_width=kb)
        recs: list = []
        for backends, pairs in worlds:
            r, _ = evaluate_queries(pairs, cfg, lambda q, b=backends: b)
            recs.extend(r)
        params = {"seeds": len(seeds), "actions": n_actions, "branching": branching, "noise": noise,
                  "horizon": horizon, "k": k_samples, "k_beam": kb, "setup": setup.value}
        if records_out is not None:
            records_out.extend({**r, "k_beam": kb} for r in recs)
        rep = aggregate(recs)
        points.append(SweepPoint(params, rep.sr, rep.macc, rep.miou, rep.sample_count, rep.failed))
    return points
