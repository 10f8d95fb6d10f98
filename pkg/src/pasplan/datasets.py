"""Normalized annotation/sample records and converters for COIN and CrossTask.

Two line-delimited JSON layouts are used:

* annotation records, one per video::

    {"video_id", "task_name", "goal", "split", "steps": [{"action", "start", "end"}]}

* planning samples, one per query::

    {"sample_id", "task_name", "setup", "horizon", "ground_truth_plan",
     "goal": <text>, "history": [ids]}          # vpa
     "start": <id>, "goal": <id>}               # pp
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .domain import (
    Action,
    ActionId,
    AdmissibleActionSet,
    GoalSpec,
    Observation,
    PlanningQuery,
    Setup,
    normalize_description,
    steps_from_ids,
)
from .errors import SchemaError
from .perception_io import PathLike, read_jsonl, write_jsonl


@dataclass(frozen=True)
class AnnotatedStep:
    action: ActionId
    start: float = 0.0
    end: float = 0.0


@dataclass(frozen=True)
class Annotation:
    video_id: str
    task_name: str
    goal: str
    steps: tuple[AnnotatedStep, ...]
    split: str = "test"

    @property
    def actions(self) -> tuple[ActionId, ...]:
        return tuple(s.action for s in self.steps)

    def to_record(self) -> dict:
        return {
            "video_id": self.video_id,
            "task_name": self.task_name,
            "goal": self.goal,
            "split": self.split,
            "steps": [{"action": s.action, "start": s.start, "end": s.end} for s in self.steps],
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Annotation":
        for key in ("video_id", "task_name", "steps"):
            if key not in rec:
                raise SchemaError("missing field", key)
        steps = []
        for i, s in enumerate(rec["steps"]):
            if isinstance(s, int):
                steps.append(AnnotatedStep(s))
                continue
            if "action" not in s:
                raise SchemaError("missing field", f"steps[{i}].action")
            steps.append(AnnotatedStep(int(s["action"]), float(s.get("start", 0.0)), float(s.get("end", 0.0))))
        return cls(
            str(rec["video_id"]),
            str(rec["task_name"]),
            str(rec.get("goal") or task_to_goal(rec["task_name"])),
            tuple(steps),
            str(rec.get("split", "test")),
        )


def load_annotations(path: PathLike) -> list[Annotation]:
    return [Annotation.from_record(r) for r in read_jsonl(path)]


def save_annotations(path: PathLike, annotations: Iterable[Annotation]) -> int:
    return write_jsonl(path, (a.to_record() for a in annotations))


_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


def task_to_goal(task_name: str) -> str:
    """``"ChangeCarTire"`` -> ``"change car tire"``; already-spaced names pass through."""
    return normalize_description(_CAMEL.sub(" ", task_name).replace("_", " "))


@dataclass(frozen=True)
class Sample:
    """One planning query with its ground-truth plan, as stored on disk."""

    sample_id: str
    task_name: str
    setup: Setup
    horizon: int
    ground_truth_plan: tuple[ActionId, ...]
    goal_text: Optional[str] = None
    history: tuple[ActionId, ...] = ()
    start: Optional[ActionId] = None
    goal_step: Optional[ActionId] = None

    def to_record(self) -> dict:
        rec: dict[str, Any] = {
            "sample_id": self.sample_id,
            "task_name": self.task_name,
            "setup": self.setup.value,
            "horizon": self.horizon,
            "ground_truth_plan": list(self.ground_truth_plan),
        }
        if self.setup is Setup.VPA:
            rec["goal"] = self.goal_text
            rec["history"] = list(self.history)
        else:
            rec["start"] = self.start
            rec["goal"] = self.goal_step
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Sample":
        for key in ("sample_id", "task_name", "setup", "horizon", "ground_truth_plan", "goal"):
            if key not in rec:
                raise SchemaError("missing field", key)
        setup = Setup(rec["setup"])
        common = dict(
            sample_id=str(rec["sample_id"]),
            task_name=str(rec["task_name"]),
            setup=setup,
            horizon=int(rec["horizon"]),
            ground_truth_plan=tuple(int(a) for a in rec["ground_truth_plan"]),
        )
        if setup is Setup.VPA:
            if "history" not in rec:
                raise SchemaError("missing field", "history")
            return cls(goal_text=str(rec["goal"]), history=tuple(int(a) for a in rec["history"]), **common)
        if "start" not in rec:
            raise SchemaError("missing field", "start")
        return cls(start=int(rec["start"]), goal_step=int(rec["goal"]), **common)

    def to_query(self, vocab: AdmissibleActionSet) -> PlanningQuery:
        if self.setup is Setup.VPA:
            obs = Observation.history(steps_from_ids(self.history, vocab))
            goal = GoalSpec.from_text(self.goal_text or task_to_goal(self.task_name))
        else:
            obs = Observation.start(vocab.step(self.start))
            goal = GoalSpec.from_step(vocab.step(self.goal_step))
        return PlanningQuery(obs, goal, self.horizon, self.task_name, self.setup, self.sample_id)


def load_samples(path: PathLike) -> list[Sample]:
    return [Sample.from_record(r) for r in read_jsonl(path)]


def save_samples(path: PathLike, samples: Iterable[Sample]) -> int:
    return write_jsonl(path, (s.to_record() for s in samples))


# -- raw dataset converters ---------------------------------------------------


def _split_name(subset: str) -> str:
    return "train" if subset.lower().startswith("train") else "test"


def import_coin(coin_json: PathLike) -> tuple[AdmissibleActionSet, list[Annotation]]:
    """Convert the COIN ``COIN.json`` database into vocabulary + annotations.

    Step ids are renumbered contiguously in ascending order of the original
    id; steps sharing a label collapse onto one admissible action.
    """
    with open(coin_json, encoding="utf-8") as fh:
        db = json.load(fh)
    db = db.get("database", db)

    labels: dict[int, tuple[str, str]] = {}
    for vid, entry in db.items():
        for seg in entry.get("annotation", []):
            sid = int(seg["id"])
            labels.setdefault(sid, (seg["label"], entry["class"]))

    vocab, remap = _vocab_from_labels(sorted(labels.items()))
    annotations = []
    for vid in sorted(db):
        entry = db[vid]
        segs = sorted(entry.get("annotation", []), key=lambda s: float(s["segment"][0]))
        steps = tuple(
            AnnotatedStep(remap[int(s["id"])], float(s["segment"][0]), float(s["segment"][1])) for s in segs
        )
        task = str(entry["class"])
        annotations.append(Annotation(vid, task, task_to_goal(task), steps, _split_name(entry.get("subset", "test"))))
    return vocab, annotations


def _vocab_from_labels(items: Sequence[tuple[Any, tuple[str, str]]]):
    """Assign contiguous indices, merging duplicate (normalized) labels."""
    by_desc: dict[str, int] = {}
    actions: list[Action] = []
    remap: dict[Any, int] = {}
    for key, (label, task) in items:
        desc = normalize_description(label)
        if desc not in by_desc:
            by_desc[desc] = len(actions)
            actions.append(Action(len(actions), desc, task))
        remap[key] = by_desc[desc]
    return AdmissibleActionSet(actions), remap


def _read_crosstask_tasks(path: Path) -> dict[str, tuple[str, list[str]]]:
    """``tasks_primary.txt``: blocks of id, name, url, n_steps, comma-separated steps."""
    lines = path.read_text(encoding="utf-8").splitlines()
    tasks: dict[str, tuple[str, list[str]]] = {}
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        if i + 4 >= len(lines):
            raise SchemaError("truncated task block", f"{path}:{i + 1}")
        tid = lines[i].strip()
        name = lines[i + 1].strip()
        n = int(lines[i + 3].strip())
        steps = [s.strip() for s in lines[i + 4].split(",")]
        if len(steps) != n:
            raise SchemaError(f"expected {n} steps, found {len(steps)}", f"{path}:{i + 5}")
        tasks[tid] = (name, steps)
        i += 5
    return tasks


def import_crosstask(root: PathLike) -> tuple[AdmissibleActionSet, list[Annotation]]:
    """Convert a CrossTask release directory.

    Expects ``tasks_primary.txt`` and ``annotations/<task>_<video>.csv`` under
    ``root``; ``videos_val.csv`` (optional) marks the test split.
    """
    root = Path(root)
    tasks = _read_crosstask_tasks(root / "tasks_primary.txt")
    items = [((tid, k), (step, name)) for tid, (name, steps) in sorted(tasks.items()) for k, step in enumerate(steps, 1)]
    vocab, remap = _vocab_from_labels(items)

    val: set[tuple[str, str]] = set()
    val_file = root / "videos_val.csv"
    if val_file.exists():
        with open(val_file, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if len(row) >= 2:
                    val.add((row[0].strip(), row[1].strip()))

    annotations = []
    for csv_path in sorted((root / "annotations").glob("*.csv")):
        tid, _, vid = csv_path.stem.partition("_")
        if tid not in tasks:
            raise SchemaError(f"unknown task id {tid!r}", str(csv_path))
        rows = []
        with open(csv_path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if row:
                    rows.append((float(row[1]), float(row[2]), int(float(row[0]))))
        rows.sort()
        steps = tuple(AnnotatedStep(remap[(tid, k)], s, e) for s, e, k in rows)
        name = tasks[tid][0]
        split = "test" if (tid, vid) in val else "train"
        annotations.append(Annotation(vid, name, task_to_goal(name), steps, split))
    return vocab, annotations
