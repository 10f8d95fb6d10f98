"""Plan metrics, sample generation and the experiment harness."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from .assessment import EMPTY_GRAPH, ValueMask, ValueWeights, build_task_graph
from .datasets import Annotation, Sample
from .domain import ActionId, ActionPlan, AdmissibleActionSet, PlanningQuery, Setup
from .errors import ContractViolation, PlannerError
from .perception_io import (
    ClipPredictionFile,
    StepPredictionFile,
    consolidate_history,
    dumps_record,
)
from .proposer import SHOT_LIMITS
from .search import Backends, SearchConfig, SearchTrace, plan

log = logging.getLogger(__name__)

PlanLike = Union[ActionPlan, Sequence[ActionId]]


def _ids(p: PlanLike) -> tuple[ActionId, ...]:
    return p.actions if isinstance(p, ActionPlan) else tuple(p)


def _pair(pred: PlanLike, gt: PlanLike):
    a, b = _ids(pred), _ids(gt)
    if len(a) != len(b):
        raise ContractViolation(f"prediction length {len(a)} != ground-truth length {len(b)}")
    return a, b


def success_rate(pred: PlanLike, gt: PlanLike) -> int:
    a, b = _pair(pred, gt)
    return int(a == b)


def mean_accuracy(pred: PlanLike, gt: PlanLike) -> float:
    a, b = _pair(pred, gt)
    if not a:
        return 1.0
    return sum(x == y for x, y in zip(a, b)) / len(a)


def mean_iou(pred: PlanLike, gt: PlanLike) -> float:
    """Overlap of the two plans viewed as sets of unique action ids."""
    a, b = _pair(pred, gt)
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        return 1.0
    return len(sa & sb) / len(union)


@dataclass
class MetricReport:
    sr: float
    macc: float
    miou: float
    sample_count: int
    failed: int = 0
    per_horizon: dict = field(default_factory=dict)
    header: dict = field(default_factory=dict)

    @property
    def coverage(self) -> float:
        total = self.sample_count + self.failed
        return self.sample_count / total if total else 0.0

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["coverage"] = self.coverage
        rec["per_horizon"] = {str(k): v for k, v in sorted(self.per_horizon.items())}
        return rec

    def to_markdown(self) -> str:
        """Summary table with metrics as percentages."""
        lines = [f"<!-- {k}: {_fmt_header(v)} -->" for k, v in self.header.items()]
        lines += ["| T | SR | mAcc | mIoU | n |", "|---|---|---|---|---|"]
        for T, m in sorted(self.per_horizon.items()):
            lines.append(f"| {T} | {100 * m['sr']:.2f} | {100 * m['macc']:.2f} | {100 * m['miou']:.2f} | {m['n']} |")
        lines.append(
            f"| all | {100 * self.sr:.2f} | {100 * self.macc:.2f} | {100 * self.miou:.2f} | {self.sample_count} |"
        )
        if self.failed:
            lines.append(f"\n{self.failed} samples failed (coverage {100 * self.coverage:.1f}%)")
        return "\n".join(lines) + "\n"


def _fmt_header(v) -> str:
    return ",".join(map(str, v)) if isinstance(v, (list, tuple)) else str(v)


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else 0.0


def aggregate(records: Iterable[Mapping], header: Optional[dict] = None) -> MetricReport:
    """Arithmetic means over successful per-sample records."""
    records = list(records)
    ok = [r for r in records if r.get("error") is None]
    failed = len(records) - len(ok)
    records = ok
    by_T: dict[int, list[Mapping]] = {}
    for r in records:
        by_T.setdefault(int(r["T"]), []).append(r)
    per = {
        T: {
            "sr": _mean([r["sr"] for r in rs]),
            "macc": _mean([r["macc"] for r in rs]),
            "miou": _mean([r["miou"] for r in rs]),
            "n": len(rs),
        }
        for T, rs in by_T.items()
    }
    return MetricReport(
        _mean([r["sr"] for r in records]),
        _mean([r["macc"] for r in records]),
        _mean([r["miou"] for r in records]),
        len(records),
        failed,
        per,
        dict(header or {}),
    )


# -- sample generation ------------------------------------------------------------


@dataclass
class Dataset:
    vocab: AdmissibleActionSet
    annotations: list[Annotation]
    clip_predictions: Optional[Mapping[str, ClipPredictionFile]] = None
    step_predictions: Optional[Mapping[str, StepPredictionFile]] = None

    def split(self, name: str) -> list[Annotation]:
        return [a for a in self.annotations if a.split == name]


def build_samples(
    dataset: Dataset,
    setup: Setup,
    horizon: int,
    split: str = "test",
    history_source: str = "predicted",
) -> list[Sample]:
    """Windowed planning samples from the annotations of one split.

    VPA: every step boundary with at least one history step and ``horizon``
    future steps. PP: every window of ``horizon`` consecutive steps, its
    endpoints becoming start and goal. ``history_source="gt"`` uses
    annotated steps instead of perception predictions.
    """
    if history_source not in ("predicted", "gt"):
        raise ContractViolation(f"history_source must be 'predicted' or 'gt', got {history_source!r}")
    use_pred = history_source == "predicted"
    out: list[Sample] = []
    for ann in dataset.split(split):
        acts = ann.actions
        need = horizon + 1 if setup is Setup.VPA else horizon
        if len(acts) < need:
            log.info("skipping %s: %d steps < %d needed for %s T=%d", ann.video_id, len(acts), need, setup.value, horizon)
            continue
        if setup is Setup.VPA:
            clips = (dataset.clip_predictions or {}).get(ann.video_id) if use_pred else None
            if use_pred and dataset.clip_predictions is not None and clips is None:
                log.info("skipping %s: no clip predictions", ann.video_id)
                continue
            for cut in range(1, len(acts) - horizon + 1):
                if clips is not None:
                    obs = consolidate_history(clips.until(ann.steps[cut - 1].end), dataset.vocab)
                    history = tuple(s.action for s in obs.steps)
                else:
                    history = acts[:cut]
                out.append(
                    Sample(
                        f"{ann.video_id}:{cut}:T{horizon}",
                        ann.task_name,
                        setup,
                        horizon,
                        acts[cut : cut + horizon],
                        goal_text=ann.goal,
                        history=history,
                    )
                )
        else:
            for i in range(len(acts) - horizon + 1):
                sid = f"{ann.video_id}:{i}:T{horizon}"
                gt = acts[i : i + horizon]
                start, goal = gt[0], gt[-1]
                pred = (dataset.step_predictions or {}).get(sid) if use_pred else None
                if pred is not None:
                    start, goal = pred.start_step, pred.goal_step
                out.append(Sample(sid, ann.task_name, setup, horizon, gt, start=start, goal_step=goal))
    return out


def make_samples(
    dataset: Dataset, setup: Setup, horizon: int, split: str = "test", history_source: str = "predicted"
) -> list[tuple[PlanningQuery, ActionPlan]]:
    return [
        (s.to_query(dataset.vocab), ActionPlan.from_actions(s.ground_truth_plan, dataset.vocab))
        for s in build_samples(dataset, setup, horizon, split, history_source)
    ]


def few_shot_examples(
    annotations: Sequence[Annotation], task_name: str, shots: int, vocab: AdmissibleActionSet
) -> tuple[list[tuple[str, list[str]]], list[tuple[ActionId, ...]]]:
    """First ``shots`` training annotations of a task, as prompt examples and id plans."""
    chosen = [a for a in annotations if a.split == "train" and a.task_name == task_name][:shots]
    examples = [(a.goal, [vocab.description(x) for x in a.actions]) for a in chosen]
    return examples, [a.actions for a in chosen]


# -- experiment runner --------------------------------------------------------------


def _record(query: PlanningQuery, gt: ActionPlan, pred: Optional[ActionPlan], trace: Optional[SearchTrace], error=None):
    rec = {
        "sample_id": query.sample_id,
        "setup": query.setup.value,
        "T": query.horizon,
        "gt": list(gt.actions),
        "pred": list(pred.actions) if pred is not None else None,
        "error": error,
    }
    if pred is not None:
        rec.update(sr=success_rate(pred, gt), macc=mean_accuracy(pred, gt), miou=mean_iou(pred, gt))
        best = _best_path_values(trace)
        rec["value_breakdowns"] = best
    return rec


def _best_path_values(trace: Optional[SearchTrace]) -> list[dict]:
    if trace is None or trace.best_node_id is None:
        return []
    by_id = {e.node_id: e for level in trace.depths for e in level}
    out = []
    nid = trace.best_node_id
    while nid is not None:
        e = by_id[nid]
        out.append(e.values.as_dict())
        nid = e.parent_id
    out.reverse()
    return out


def evaluate_queries(
    pairs: Sequence[tuple[PlanningQuery, ActionPlan]],
    config: SearchConfig,
    backends_for: Callable[[PlanningQuery], Backends],
    workers: int = 1,
) -> tuple[list[dict], list[SearchTrace]]:
    """Plan every query; failures become error records instead of aborting the run."""

    def one(pair):
        query, gt = pair
        try:
            pred, trace = plan(query, config, backends_for(query))
        except PlannerError as e:
            log.warning("sample %s failed: %s", query.sample_id, e)
            trace = getattr(e, "trace", None) or SearchTrace(sample_id=query.sample_id)
            return _record(query, gt, None, None, f"{type(e).__name__}: {e}"), trace
        return _record(query, gt, pred, trace), trace

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, pairs))
    else:
        results = [one(p) for p in pairs]
    return [r for r, _ in results], [t for _, t in results]


@dataclass
class ExperimentConfig:
    setup: Setup
    horizon: int
    shots: int = 0
    weights: ValueWeights = field(default_factory=lambda: ValueWeights.preset("vpa"))
    mask: ValueMask = field(default_factory=lambda: ValueMask(("G", "M", "TG", "P")))
    search: SearchConfig = field(default_factory=SearchConfig)
    history_source: str = "predicted"
    split: str = "test"
    limit: Optional[int] = None
    workers: int = 1
    backend_name: str = "mock"
    model: str = ""

    def header(self) -> dict:
        s = self.search
        return {
            "setup": self.setup.value,
            "horizon": self.horizon,
            "shots": self.shots,
            "components": self.mask.label(),
            "weights": list(self.weights.as_tuple()),
            "k": s.k_samples,
            "beam": s.beam_width,
            "aggregation": s.path_aggregation,
            "seed": s.seed,
            "history_source": self.history_source,
            "backend": self.backend_name,
            "model": self.model,
        }


def run_experiment(
    config: ExperimentConfig,
    dataset: Dataset,
    llm,
    index,
    out_dir: Optional[Union[str, Path]] = None,
    samples: Optional[Sequence[Sample]] = None,
) -> tuple[MetricReport, list[dict]]:
    """Run one configuration over a dataset; optionally write result files to ``out_dir``.

    ``samples`` overrides the windowed samples built from the annotations.
    """
    if config.shots > SHOT_LIMITS[config.setup]:
        raise ContractViolation(
            f"{config.shots} shots exceed the {config.setup.value} limit of {SHOT_LIMITS[config.setup]}"
        )
    if samples is None:
        pairs = make_samples(dataset, config.setup, config.horizon, config.split, config.history_source)
    else:
        pairs = [
            (s.to_query(dataset.vocab), ActionPlan.from_actions(s.ground_truth_plan, dataset.vocab))
            for s in samples
            if s.setup is config.setup and s.horizon == config.horizon
        ]
    if config.limit is not None:
        pairs = pairs[: config.limit]

    cache: dict[str, Backends] = {}

    def backends_for(query: PlanningQuery) -> Backends:
        b = cache.get(query.task_name)
        if b is None:
            graph = EMPTY_GRAPH
            examples: list = []
            if config.shots > 0:
                examples, plans = few_shot_examples(dataset.annotations, query.task_name, config.shots, dataset.vocab)
                graph = build_task_graph(plans)
            b = Backends(llm, index, graph, examples, config.weights, config.mask, SHOT_LIMITS[config.setup])
            cache[query.task_name] = b
        return b

    # build per-task backends up front so worker threads only read the cache
    for q, _ in pairs:
        backends_for(q)
    records, traces = evaluate_queries(pairs, config.search, backends_for, config.workers)
    header = config.header()
    report = aggregate(records, header)
    if out_dir is not None:
        write_results(out_dir, report, records, traces)
    return report, records


def write_results(out_dir: Union[str, Path], report: MetricReport, records: Sequence[Mapping], traces: Sequence[SearchTrace]):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(dumps_record(r) + "\n")
    with open(out / "traces.jsonl", "w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(dumps_record(t.to_record()) + "\n")
    (out / "summary.json").write_text(json.dumps(report.to_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "summary.md").write_text(report.to_markdown(), encoding="utf-8")


def load_records(path: Union[str, Path]) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
