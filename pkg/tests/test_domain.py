import pytest

from pasplan.domain import (
    Action,
    ActionPlan,
    AdmissibleActionSet,
    GoalSpec,
    Observation,
    PlanningQuery,
    SearchNode,
    Setup,
    Step,
    ValueBreakdown,
    plan_from_node,
    steps_from_ids,
)
from pasplan.errors import ContractViolation

V = AdmissibleActionSet.from_descriptions(["Pour  Gas", "screw the cap", "start engine"])


def test_vocab_normalizes_and_indexes():
    assert V.description(0) == "pour gas"
    assert V.index_of("POUR gas ") == 0
    assert 2 in V and 3 not in V and -1 not in V
    assert len(V) == 3


@pytest.mark.parametrize(
    "actions",
    [
        [Action(1, "a")],
        [Action(0, "a"), Action(2, "b")],
        [Action(0, "a"), Action(1, " A ")],
        [Action(0, "  ")],
    ],
)
def test_vocab_rejects_bad_sets(actions):
    with pytest.raises(ContractViolation):
        AdmissibleActionSet(actions)


def test_step_outside_vocab():
    with pytest.raises(ContractViolation):
        V.step(5)


def vpa(T=2, hist=(0,)):
    return PlanningQuery(Observation.history(steps_from_ids(hist, V)), GoalSpec.from_text("fill up"), T, "t", Setup.VPA)


def pp(T=3):
    return PlanningQuery(Observation.start(V.step(0)), GoalSpec.from_step(V.step(2)), T, "t", Setup.PP)


def test_query_anchor():
    assert vpa(hist=(0, 1)).anchor == 1
    assert vpa(hist=()).anchor is None
    assert pp().anchor == 0


def test_query_validation():
    with pytest.raises(ContractViolation):
        pp(T=1)
    with pytest.raises(ContractViolation):
        vpa(T=0)
    with pytest.raises(ContractViolation):
        PlanningQuery(Observation.start(V.step(0)), GoalSpec.from_text("x"), 2, "t", Setup.VPA)
    with pytest.raises(ContractViolation):
        PlanningQuery(Observation.history(()), GoalSpec.from_text("x"), 2, "t", Setup.PP)
    with pytest.raises(ContractViolation):
        GoalSpec.from_text("")


def test_node_backtracking():
    root = SearchNode.root(V.step(1), 0.5)
    mid = root.child(V.step(0), 0.25)
    leaf = mid.child(V.step(2), 1.0)
    assert leaf.path_actions == (1, 0, 2)
    assert leaf.path_value == 1.75
    assert leaf.ancestry_key == (2, 0, 1)
    assert plan_from_node(leaf, 3) == ActionPlan.from_actions([1, 0, 2], V)
    with pytest.raises(ContractViolation):
        plan_from_node(mid, 3)


def test_breakdown_roundtrip():
    v = ValueBreakdown(-1.0, 0.9, 0.7, 0.01, 0.3)
    assert ValueBreakdown.from_dict(v.as_dict()) == v
    assert list(v.as_dict()) == ["G", "M", "TG", "P", "combined"]


def test_plan_descriptions():
    p = ActionPlan((Step(0, "pour gas"), Step(1, "screw the cap")))
    assert p.actions == (0, 1) and p.descriptions == ("pour gas", "screw the cap") and len(p) == 2
