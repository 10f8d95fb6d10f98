"""Queries whose rendered prompts are frozen under tests/golden/."""

from pasplan.domain import AdmissibleActionSet, GoalSpec, Observation, PlanningQuery, Setup, steps_from_ids

VOCAB = AdmissibleActionSet.from_descriptions(
    ["pour gas", "screw the cap", "start the engine", "check the oil", "remove the cap", "wipe the funnel"]
)
VPA_QUERY = PlanningQuery(
    Observation.history(steps_from_ids([4, 0], VOCAB)), GoalSpec.from_text("refuel a lawn mower"), 3,
    "RefuelLawnMower", Setup.VPA, "mower:2:T3",
)
PP_QUERY = PlanningQuery(
    Observation.start(VOCAB.step(4)), GoalSpec.from_step(VOCAB.step(2)), 4, "RefuelLawnMower", Setup.PP,
    "mower:0:T4",
)
VPA_EXAMPLES = [
    ("refuel a lawn mower", ["remove the cap", "pour gas", "screw the cap"]),
    ("refuel a lawn mower", ["check the oil", "remove the cap", "pour gas", "screw the cap", "start the engine"]),
    ("refuel a lawn mower", ["remove the cap", "wipe the funnel", "pour gas", "screw the cap"]),
]
PP_EXAMPLES = [("refuel a lawn mower", ["remove the cap", "pour gas", "screw the cap", "start the engine"])] * 10

CASES = {
    "next_action_vpa_zero_shot.txt": ("next", VPA_QUERY, [], []),
    "next_action_vpa_3_shot.txt": ("next", VPA_QUERY, [1], VPA_EXAMPLES),
    "next_action_pp_10_shot.txt": ("next", PP_QUERY, [4, 0], PP_EXAMPLES),
    "plan_evaluation_vpa.txt": ("eval", VPA_QUERY, [1, 2], VPA_EXAMPLES),
    "plan_evaluation_pp_zero_shot.txt": ("eval", PP_QUERY, [4], []),
}


def render(name):
    from pasplan.proposer import build_next_action_prompt, build_plan_evaluation_prompt

    kind, query, partial, examples = CASES[name]
    fn = build_next_action_prompt if kind == "next" else build_plan_evaluation_prompt
    return fn(query, steps_from_ids(partial, VOCAB), examples)
