"""Goal-oriented procedural planning by propose, assess and search over a language model."""

from .assessment import ALL_COMPONENTS, PRESETS, TABLE5_MASKS, TaskGraph, ValueMask, ValueWeights, build_task_graph
from .domain import ActionPlan, AdmissibleActionSet, GoalSpec, Observation, PlanningQuery, Setup
from .evaluation import aggregate, mean_accuracy, mean_iou, run_experiment, success_rate
from .grounding import HashEmbedder, build_index, ground
from .search import Backends, SearchConfig, SearchTrace, exhaustive_oracle, plan

__all__ = [
    "ALL_COMPONENTS",
    "PRESETS",
    "TABLE5_MASKS",
    "ActionPlan",
    "AdmissibleActionSet",
    "Backends",
    "GoalSpec",
    "HashEmbedder",
    "Observation",
    "PlanningQuery",
    "SearchConfig",
    "SearchTrace",
    "Setup",
    "TaskGraph",
    "ValueMask",
    "ValueWeights",
    "aggregate",
    "build_index",
    "build_task_graph",
    "exhaustive_oracle",
    "ground",
    "mean_accuracy",
    "mean_iou",
    "plan",
    "run_experiment",
    "success_rate",
]
