import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import exhaustive_fixture, vocab_of
from pasplan.assessment import EMPTY_GRAPH, ValueMask, ValueWeights, build_task_graph
from pasplan.domain import GoalSpec, Observation, PlanningQuery, Setup, steps_from_ids
from pasplan.errors import ConfigError, OracleRefusal, SearchError
from pasplan.grounding import HashEmbedder, build_index
from pasplan.proposer import NO, YES, BackendSample, FunctionBackend, parse_prompt
from pasplan.search import (
    NEUTRAL_PARTIAL_PLAN,
    Backends,
    SearchConfig,
    SearchTrace,
    exhaustive_oracle,
    plan,
    task_graph_value,
)

V = vocab_of(4)


def query(hist=(0,), T=2, setup=Setup.VPA):
    if setup is Setup.VPA:
        return PlanningQuery(Observation.history(steps_from_ids(hist, V)), GoalSpec.from_text("make pancakes"), T,
                             "pancakes", setup, "q")
    return PlanningQuery(Observation.start(V.step(hist[0])), GoalSpec.from_step(V.step(3)), T, "pancakes", setup, "q")


def scripted(next_fn, yes_fn=lambda plan: 0.0):
    """Backend whose proposals and YES logit are functions of the parsed plan."""
    calls = {"next": 0, "eval": 0}
    ids = {a.description: a.index for a in V}

    def fn(prompt, n):
        p = parse_prompt(prompt)
        plan_ids = tuple(ids[d] for d in p.plan)
        if p.kind == "next_action":
            calls["next"] += 1
            return [BackendSample(t, (lp,)) for t, lp in next_fn(plan_ids)][:n]
        calls["eval"] += 1
        y = yes_fn(plan_ids)
        return [BackendSample(YES, (y,), {YES: y, NO: 0.0})]

    return FunctionBackend(fn), calls


def backends(llm, graph=EMPTY_GRAPH, mask=None, weights="vpa"):
    kw = {} if mask is None else {"mask": ValueMask.parse(mask)}
    return Backends(llm, build_index(V, HashEmbedder()), graph, (), ValueWeights.preset(weights), **kw)


@pytest.mark.parametrize("seed", range(60))
def test_full_width_matches_oracle_up_to_two_steps(seed):
    fx = exhaustive_fixture(seed, T=1 + seed % 2)
    b = fx.backends()
    got, _ = plan(fx.query, fx.config(), b)
    want = exhaustive_oracle(fx.query, fx.scorer(b.index), fx.vocab, allowed=fx.allowed)
    assert got == want


@pytest.mark.parametrize("seed", range(40))
def test_wider_beam_never_lowers_score_up_to_two_steps(seed):
    fx = exhaustive_fixture(seed, T=2)
    C = len(fx.vocab)
    scores = []
    for kb in range(1, C + 1):
        _, tr = plan(fx.query, fx.config(beam=kb), fx.backends())
        best = [e for e in tr.depths[-1] if e.node_id == tr.best_node_id][0]
        scores.append(best.path_value)
    assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4))
def test_budget_and_beam_invariants(seed, T, kb):
    fx = exhaustive_fixture(seed, C=4, T=T, setup=Setup.VPA)
    b = fx.backends()
    _, tr = plan(fx.query, SearchConfig(k_samples=4, beam_width=kb), b)
    assert tr.proposal_calls <= kb * T
    assert b.llm.calls <= tr.proposal_calls + sum(len(level) for level in tr.depths)
    for d in range(1, T + 1):
        assert 1 <= len(tr.kept(d)) <= kb
    assert len(tr.depths) == T


def test_deterministic_trace():
    fx = exhaustive_fixture(11, C=5, T=4)
    a = plan(fx.query, fx.config(beam=3), fx.backends())
    b = plan(fx.query, fx.config(beam=3), fx.backends())
    assert a[0] == b[0] and a[1].to_json() == b[1].to_json()


def test_parallel_expansion_matches_sequential():
    fx = exhaustive_fixture(5, C=5, T=3)
    seq = plan(fx.query, SearchConfig(k_samples=5, beam_width=3), fx.backends())
    par = plan(fx.query, SearchConfig(k_samples=5, beam_width=3, workers=3), fx.backends())
    assert seq[1].to_json() == par[1].to_json()


def test_trace_roundtrip_and_render():
    fx = exhaustive_fixture(3, C=3, T=2)
    _, tr = plan(fx.query, fx.config(beam=2), fx.backends())
    back = SearchTrace.from_record(tr.to_record())
    assert back.to_json() == tr.to_json()
    text = tr.render_text()
    assert text.splitlines()[0].startswith("search tree for fx3")
    assert text.count("*") == sum(len(tr.kept(d)) for d in (1, 2))


def test_greedy_picks_highest_step_value():
    # V_P favours "heat the pan" (1) after anything
    llm, _ = scripted(lambda p: [(V.description(a), -1.0) for a in range(4)], lambda p: 3.0 if p[-1] == 1 else 0.0)
    got, _ = plan(query(T=1), SearchConfig(k_samples=4, beam_width=1), backends(llm))
    assert got.actions == (1,)


def test_beam_recovers_from_greedy_trap():
    # step 1: action 1 looks best; but only action 2 leads to a strong second step
    def yes(p):
        if len(p) == 1:
            return {1: 2.0, 2: 1.5}.get(p[0], -3.0)
        return 6.0 if p == (2, 3) else -3.0

    llm, _ = scripted(lambda p: [(V.description(a), -1.0) for a in range(4)], yes)
    greedy, _ = plan(query(T=2), SearchConfig(k_samples=4, beam_width=1), backends(llm))
    wide, _ = plan(query(T=2), SearchConfig(k_samples=4, beam_width=2), backends(llm))
    assert greedy.actions[0] == 1 and wide.actions == (2, 3)


def test_duplicates_merge_keeping_max():
    llm, _ = scripted(lambda p: [("heat the pan", -2.0), ("Heat the pan.", -0.5), ("flip the pancake", -1.0)])
    _, tr = plan(query(T=1), SearchConfig(k_samples=3, beam_width=2), backends(llm))
    level = tr.depths[0]
    assert sorted(e.action for e in level) == [1, 3]
    heat = [e for e in level if e.action == 1][0]
    assert heat.values.generation == -0.5
    assert heat.raw_texts == ("heat the pan", "Heat the pan.")


def test_repetition_rejected_without_self_loop():
    llm, _ = scripted(lambda p: [("heat the pan", -0.1), ("pour the batter", -3.0)])
    got, tr = plan(query(hist=(1,), T=2), SearchConfig(k_samples=2, beam_width=1), backends(llm))
    # the observed anchor is not a plan step, so the first step may equal it
    assert got.actions == (1, 2)
    assert any("repeats previous step 1" in r.reason for r in tr.rejected)


def test_repetition_allowed_with_self_loop():
    graph = build_task_graph([[1, 1, 2]])
    llm, _ = scripted(lambda p: [("heat the pan", -0.1), ("pour the batter", -3.0)])
    got, tr = plan(query(hist=(0,), T=2), SearchConfig(k_samples=2, beam_width=1), backends(llm, graph))
    assert got.actions == (1, 1) and not tr.rejected


def test_masked_partial_plan_skips_evaluation():
    llm, calls = scripted(lambda p: [(V.description(a), -1.0) for a in range(4)])
    _, tr = plan(query(T=2), SearchConfig(k_samples=4, beam_width=2), backends(llm, mask="G,M"))
    assert calls["eval"] == 0
    assert all(e.values.partial_plan == NEUTRAL_PARTIAL_PLAN for level in tr.depths for e in level)


def test_zero_shot_ignores_task_graph_weight():
    llm, _ = scripted(lambda p: [("pour the batter", -1.0)], lambda p: 0.0)
    b = backends(llm)
    assert b.effective_weights.task_graph == 0.0
    _, tr = plan(query(T=1), SearchConfig(k_samples=1, beam_width=1), b)
    v = tr.depths[0][0].values
    assert v.combined == pytest.approx(0.2 * -1.0 + 0.1 * v.mapping + 0.7 * 0.5, abs=1e-12)


def test_pp_task_graph_skips_restated_start():
    g = build_task_graph([[0, 1, 2]])
    q = query(hist=(0,), T=3, setup=Setup.PP)
    assert task_graph_value(q, g, [0]) == 1.0
    assert task_graph_value(q, g, [0, 1]) == 1.0
    assert task_graph_value(q, g, [0, 1, 2]) == 1.0
    assert task_graph_value(q, g, [1]) == 1.0  # start -> 1 seen once of once
    assert task_graph_value(q, g, [2]) == pytest.approx(1e-3)


def test_last_step_aggregation_ranks_by_step_value():
    def yes(p):
        return {(1,): 3.0, (2,): -1.0, (1, 3): -0.5, (2, 3): 2.5}.get(p, -5.0)

    llm, _ = scripted(lambda p: [("heat the pan", -1.0), ("pour the batter", -1.0), ("flip the pancake", -1.0)], yes)
    s, _ = plan(query(T=2), SearchConfig(k_samples=3, beam_width=2), backends(llm))
    last, _ = plan(query(T=2), SearchConfig(k_samples=3, beam_width=2, path_aggregation="last-step"), backends(llm))
    assert s.actions == (1, 3) and last.actions == (2, 3)


def test_nothing_grounds_raises_with_trace():
    llm, _ = scripted(lambda p: [("...", -1.0)] * 3)
    with pytest.raises(SearchError) as e:
        plan(query(T=2), SearchConfig(k_samples=3, beam_width=1), backends(llm))
    assert isinstance(e.value.trace, SearchTrace)


def test_config_validation():
    with pytest.raises(ConfigError):
        SearchConfig(k_samples=2, beam_width=3)
    with pytest.raises(ConfigError):
        SearchConfig(path_aggregation="max")
    with pytest.raises(ConfigError):
        plan(query(T=2), SearchConfig(horizon=3), backends(scripted(lambda p: [])[0]))


def test_oracle_refuses_large_spaces():
    with pytest.raises(OracleRefusal):
        exhaustive_oracle(query(T=4), lambda p, a: 0.0, V, max_paths=100)


def test_oracle_tie_goes_to_lexicographic_first():
    got = exhaustive_oracle(query(T=2), lambda p, a: 1.0, V)
    assert got.actions == (0, 0)
