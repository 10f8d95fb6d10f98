"""Shared fixtures: tiny vocabularies and the exhaustive-proposer world."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from pasplan.assessment import (
    EMPTY_GRAPH,
    TaskGraph,
    ValueWeights,
    build_task_graph,
    combine,
    generation_score,
    partial_plan_score,
)
from pasplan.domain import AdmissibleActionSet, GoalSpec, Observation, PlanningQuery, Setup, steps_from_ids
from pasplan.grounding import HashEmbedder, build_index
from pasplan.proposer import NO, YES, BackendSample, FunctionBackend, parse_prompt
from pasplan.search import Backends, SearchConfig, task_graph_value

WORDS = ["whisk the eggs", "heat the pan", "pour the batter", "flip the pancake", "plate the pancake",
         "cut the fruit", "wash the bowl", "add the sugar"]


def vocab_of(n: int) -> AdmissibleActionSet:
    return AdmissibleActionSet.from_descriptions(WORDS[:n])


def _rng(*parts) -> random.Random:
    return random.Random(repr(parts))


@dataclass
class ExhaustiveFixture:
    """Every expansion proposes each admissible action exactly once.

    Token log-probs and YES/NO logits are pseudo-random functions of
    (fixture seed, prefix, action), so step values depend on the whole prefix.
    """

    seed: int
    vocab: AdmissibleActionSet
    query: PlanningQuery
    graph: TaskGraph
    weights: ValueWeights

    def logprobs(self, prefix: tuple, action: int) -> tuple:
        r = _rng(self.seed, "g", prefix, action)
        return tuple(-3.0 * r.random() for _ in range(1 + r.randrange(3)))

    def logits(self, plan: tuple) -> tuple:
        r = _rng(self.seed, "p", plan)
        return r.gauss(0, 2), r.gauss(0, 2)

    def backend(self) -> FunctionBackend:
        ids = {a.description: a.index for a in self.vocab}

        def fn(prompt, n):
            parsed = parse_prompt(prompt)
            prefix = tuple(ids[d] for d in parsed.plan)
            if parsed.kind == "next_action":
                return [BackendSample(a.description, self.logprobs(prefix, a.index)) for a in self.vocab]
            y, no = self.logits(prefix)
            return [BackendSample(YES, (y,), {YES: y, NO: no})]

        return FunctionBackend(fn)

    def backends(self) -> Backends:
        return Backends(self.backend(), build_index(self.vocab, HashEmbedder()), self.graph, (), self.weights)

    def config(self, beam=None) -> SearchConfig:
        C = len(self.vocab)
        return SearchConfig(k_samples=C, beam_width=beam or C)

    def scorer(self, index):
        """Independent step-value oracle for ``exhaustive_oracle``."""
        w = self.weights if not self.graph.is_empty else ValueWeights(
            self.weights.generation, self.weights.mapping, 0.0, self.weights.partial_plan)

        def score(prefix: tuple, a: int) -> float:
            g = generation_score(self.logprobs(prefix, a))
            _, m = index.ground(self.vocab.description(a))
            p = partial_plan_score(*self.logits(prefix + (a,)))
            tg = task_graph_value(self.query, self.graph, prefix + (a,))
            return combine((g, m, tg, p), w)

        return score

    def allowed(self, prefix: tuple, a: int) -> bool:
        return not (prefix and prefix[-1] == a and self.graph.count(a, a) == 0)


def exhaustive_fixture(seed: int, C: int = None, T: int = None, setup: Setup = None) -> ExhaustiveFixture:
    r = _rng("fixture", seed)
    C = C or r.randint(2, 5)
    T = T or r.randint(1, 4)
    setup = setup or (Setup.VPA if T < 2 or r.random() < 0.5 else Setup.PP)
    vocab = vocab_of(C)
    if setup is Setup.VPA:
        hist = [r.randrange(C) for _ in range(r.randint(1, 3))]
        query = PlanningQuery(
            Observation.history(steps_from_ids(hist, vocab)), GoalSpec.from_text("make pancakes"), T, "pancakes",
            Setup.VPA, f"fx{seed}",
        )
    else:
        query = PlanningQuery(
            Observation.start(vocab.step(r.randrange(C))), GoalSpec.from_step(vocab.step(r.randrange(C))), T,
            "pancakes", Setup.PP, f"fx{seed}",
        )
    shots = r.randint(0, 3)
    plans = [[r.randrange(C) for _ in range(r.randint(2, 6))] for _ in range(shots)]
    graph = build_task_graph(plans) if plans else EMPTY_GRAPH
    weights = ValueWeights.preset(setup.value)
    return ExhaustiveFixture(seed, vocab, query, graph, weights)


def close(a: float, b: float, tol: float = 1e-12) -> bool:
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)
