"""Ingest precomputed perception outputs and turn them into observations.

Nothing here runs a vision model: per-clip action predictions (video
history) and per-image step predictions (start/goal) arrive as files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence, Union

from .domain import (
    ActionId,
    AdmissibleActionSet,
    GoalSpec,
    Observation,
    Step,
    vocab_from_records,
)
from .errors import IngestionError, SchemaError

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Clip:
    start_sec: float
    end_sec: float
    action: ActionId
    confidence: float = 1.0


@dataclass(frozen=True)
class ClipPredictionFile:
    """Per-window action predictions for one video, in temporal order."""

    video_id: str
    clips: tuple[Clip, ...]

    def __post_init__(self):
        prev_end = float("-inf")
        for i, c in enumerate(self.clips):
            if c.end_sec < c.start_sec:
                raise SchemaError("clip ends before it starts", f"clips[{i}]")
            if c.start_sec < prev_end:
                raise SchemaError("clips overlap or are out of order", f"clips[{i}]")
            if not 0.0 <= c.confidence <= 1.0:
                raise SchemaError("confidence outside [0, 1]", f"clips[{i}].confidence")
            prev_end = c.end_sec

    @classmethod
    def from_actions(cls, video_id: str, actions: Sequence[ActionId], window: float = 1.0):
        return cls(
            video_id,
            tuple(Clip(i * window, (i + 1) * window, a) for i, a in enumerate(actions)),
        )

    def until(self, t: float) -> "ClipPredictionFile":
        """Clips that end at or before ``t`` seconds."""
        return ClipPredictionFile(self.video_id, tuple(c for c in self.clips if c.end_sec <= t))

    def to_record(self) -> dict:
        return {
            "video_id": self.video_id,
            "clips": [
                {"start": c.start_sec, "end": c.end_sec, "action": c.action, "confidence": c.confidence}
                for c in self.clips
            ],
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "ClipPredictionFile":
        video_id = _require(rec, "video_id", "")
        raw = _require(rec, "clips", "")
        clips = []
        for i, c in enumerate(raw):
            path = f"clips[{i}]"
            clips.append(
                Clip(
                    float(_require(c, "start", path)),
                    float(_require(c, "end", path)),
                    int(_require(c, "action", path)),
                    float(c.get("confidence", 1.0)),
                )
            )
        return cls(str(video_id), tuple(clips))


@dataclass(frozen=True)
class StepPredictionFile:
    """Predicted start and goal steps for one procedural-planning sample."""

    sample_id: str
    start_step: ActionId
    goal_step: ActionId

    def to_record(self) -> dict:
        return {"sample_id": self.sample_id, "start_step": self.start_step, "goal_step": self.goal_step}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "StepPredictionFile":
        return cls(
            str(_require(rec, "sample_id", "")),
            int(_require(rec, "start_step", "")),
            int(_require(rec, "goal_step", "")),
        )


def _require(rec: Mapping[str, Any], key: str, parent: str):
    if not isinstance(rec, Mapping):
        raise SchemaError("expected an object", parent or "<record>")
    if key not in rec:
        raise SchemaError("missing field", f"{parent}.{key}" if parent else key)
    return rec[key]


def run_collapse(actions: Iterable[ActionId]) -> list[ActionId]:
    """Collapse maximal runs of equal consecutive ids to a single id."""
    out: list[ActionId] = []
    for a in actions:
        if not out or out[-1] != a:
            out.append(a)
    return out


def consolidate_history(clips: ClipPredictionFile, vocab: AdmissibleActionSet) -> Observation:
    """History observation with consecutive same-action clips merged into one step."""
    for i, c in enumerate(clips.clips):
        if c.action not in vocab:
            raise IngestionError(
                f"video {clips.video_id}: clip {i} ({c.start_sec}-{c.end_sec}s) predicts "
                f"unknown action {c.action} (vocabulary size {len(vocab)})"
            )
    ids = run_collapse(c.action for c in clips.clips)
    return Observation.history(Step(a, vocab.description(a)) for a in ids)


def load_pp_observation(
    file: Union[StepPredictionFile, Mapping[str, Any]], vocab: AdmissibleActionSet
) -> tuple[Observation, GoalSpec]:
    if not isinstance(file, StepPredictionFile):
        file = StepPredictionFile.from_record(file)
    for name in ("start_step", "goal_step"):
        a = getattr(file, name)
        if a not in vocab:
            raise IngestionError(
                f"sample {file.sample_id}: {name} {a} is outside a vocabulary of size {len(vocab)}"
            )
    return (
        Observation.start(vocab.step(file.start_step)),
        GoalSpec.from_step(vocab.step(file.goal_step)),
    )


# -- line-delimited JSON helpers -------------------------------------------


def read_jsonl(path: PathLike) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON: {e.msg}", f"{path}:{lineno}") from e


def dumps_record(rec: Mapping[str, Any]) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_jsonl(path: PathLike, records: Iterable[Mapping[str, Any]]) -> int:
    n = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")
            n += 1
    return n


def load_vocabulary(path: PathLike) -> AdmissibleActionSet:
    """Vocabulary file: one ``{index, description, task_name}`` record per line."""
    recs = list(read_jsonl(path))
    for i, r in enumerate(recs):
        for key in ("index", "description"):
            if key not in r:
                raise SchemaError("missing field", f"{path}[{i}].{key}")
    return vocab_from_records(recs)


def save_vocabulary(path: PathLike, vocab: AdmissibleActionSet) -> None:
    write_jsonl(
        path,
        ({"index": a.index, "description": a.description, "task_name": a.task_name} for a in vocab),
    )


def load_clip_predictions(path: PathLike) -> dict[str, ClipPredictionFile]:
    files = (ClipPredictionFile.from_record(r) for r in read_jsonl(path))
    return {f.video_id: f for f in files}


def load_step_predictions(path: PathLike) -> dict[str, StepPredictionFile]:
    files = (StepPredictionFile.from_record(r) for r in read_jsonl(path))
    return {f.sample_id: f for f in files}
