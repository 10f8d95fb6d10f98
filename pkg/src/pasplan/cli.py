"""``plan`` command line: run, ablate, trace, simulate, import, samples."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .assessment import TABLE5_MASKS, ValueMask, ValueWeights
from .config import Settings, load_settings
from .datasets import import_coin, import_crosstask, load_annotations, load_samples, save_annotations, save_samples
from .domain import Setup
from .errors import ConfigError, PlannerError
from .evaluation import Dataset, ExperimentConfig, build_samples, run_experiment
from .grounding import (
    HashEmbedder,
    HTTPEmbedder,
    PrecomputedEmbedder,
    SentenceTransformerEmbedder,
    build_index,
)
from .perception_io import (
    dumps_record,
    load_clip_predictions,
    load_step_predictions,
    load_vocabulary,
    read_jsonl,
    save_vocabulary,
)
from .proposer import CompletionClient, MockBackend, RecordingBackend, ReplayBackend, SeededMockBackend
from .search import SearchConfig, SearchTrace
from .simulator import run_sweep

log = logging.getLogger("pasplan")

VOCAB_FILE = "vocab.jsonl"
ANNOTATIONS_FILE = "annotations.jsonl"
CLIPS_FILE = "clip_predictions.jsonl"
STEPS_FILE = "step_predictions.jsonl"
MANIFEST_FILE = "ablation_manifest.json"


# -- loading ------------------------------------------------------------------------


def load_dataset(root: Path) -> Dataset:
    """A dataset directory as written by ``plan import``."""
    root = Path(root)
    if not (root / VOCAB_FILE).exists():
        raise ConfigError(f"{root} has no {VOCAB_FILE}; run `plan import` first")
    vocab = load_vocabulary(root / VOCAB_FILE)
    anns = load_annotations(root / ANNOTATIONS_FILE) if (root / ANNOTATIONS_FILE).exists() else []
    clips = load_clip_predictions(root / CLIPS_FILE) if (root / CLIPS_FILE).exists() else None
    steps = load_step_predictions(root / STEPS_FILE) if (root / STEPS_FILE).exists() else None
    return Dataset(vocab, anns, clips, steps)


def make_backend(settings: Settings, vocab, seed: int):
    b = settings.backend
    kind = b.kind
    if kind == "mock":
        llm = MockBackend.from_file(b.fixtures) if b.fixtures else SeededMockBackend(vocab.descriptions, seed)
    elif kind == "replay":
        if not b.fixtures:
            raise ConfigError("--backend replay needs --fixtures <recording.jsonl>")
        llm = ReplayBackend(b.fixtures)
    elif kind == "url":
        if not b.url:
            raise ConfigError("no backend URL; pass --backend <url> or set PLAN_BACKEND_URL")
        client = CompletionClient(b.url, b.model, b.api_key, b.timeout, b.max_retries, seed=seed)
        client.check_capabilities()
        llm = client
    else:
        raise ConfigError(f"unknown backend kind {kind!r}")
    if b.record:
        llm = RecordingBackend(llm, b.record)
    return llm


def make_embedder(spec: str, dim: int = 256):
    name, _, arg = spec.partition(":")
    if name == "hash":
        return HashEmbedder(int(arg) if arg else dim)
    if name == "cache":
        return PrecomputedEmbedder(arg)
    if name == "http":
        return HTTPEmbedder(arg)
    if name == "sbert":
        return SentenceTransformerEmbedder(arg or "all-MiniLM-L6-v2")
    raise ConfigError(f"unknown embedder {spec!r}; use hash, cache:PATH, http:URL or sbert:CKPT")


def _apply_overrides(settings: Settings, args) -> Settings:
    run = settings.run
    for key in ("setup", "horizon", "shots", "weights", "custom_weights", "k", "beam", "aggregation", "seed",
                "history_source", "split", "limit", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            run = replace(run, **{key: v})
    b = settings.backend
    backend = getattr(args, "backend", None)
    if backend is not None:
        if backend in ("mock", "replay"):
            b = replace(b, kind=backend)
        else:
            b = replace(b, kind="url", url=backend)
    for key in ("fixtures", "record", "model"):
        v = getattr(args, key, None)
        if v is not None:
            b = replace(b, **{key: v})
    emb = settings.embedding
    if getattr(args, "embedder", None):
        emb = replace(emb, provider=args.embedder)
    return Settings(b, emb, run)


def experiment_config(settings: Settings, mask: Optional[str] = None, shots: Optional[int] = None) -> ExperimentConfig:
    r = settings.run
    setup = Setup(r.setup)
    weights = r.weights
    if weights == "custom":
        if not r.custom_weights:
            raise ConfigError("--weights custom needs --custom-weights G,M,TG,P")
        weights = r.custom_weights
    search = SearchConfig(
        k_samples=r.k,
        beam_width=r.beam,
        path_aggregation=r.aggregation,
        seed=r.seed,
        temperature=r.temperature,
        max_tokens=r.max_tokens,
        top_logprobs=r.top_logprobs,
        epsilon=r.epsilon,
    )
    return ExperimentConfig(
        setup=setup,
        horizon=r.horizon,
        shots=r.shots if shots is None else shots,
        weights=ValueWeights.parse(weights),
        mask=ValueMask.parse(mask or r.mask),
        search=search,
        history_source=r.history_source,
        split=r.split,
        limit=r.limit,
        workers=r.workers,
        backend_name=settings.backend.kind,
        model=settings.backend.model,
    )


def _context(args):
    settings = _apply_overrides(load_settings(args.config), args)
    if args.dataset is None:
        raise ConfigError("--dataset is required")
    dataset = load_dataset(Path(args.dataset))
    samples = load_samples(args.samples) if getattr(args, "samples", None) else None
    llm = make_backend(settings, dataset.vocab, settings.run.seed)
    index = build_index(dataset.vocab, make_embedder(settings.embedding.provider, settings.embedding.dim))
    return settings, dataset, samples, llm, index


# -- subcommands ----------------------------------------------------------------------


def cmd_run(args) -> int:
    settings, dataset, samples, llm, index = _context(args)
    cfg = experiment_config(settings)
    report, _ = run_experiment(cfg, dataset, llm, index, args.out, samples=samples)
    sys.stdout.write(report.to_markdown())
    return 0


def cmd_ablate(args) -> int:
    settings, dataset, samples, llm, index = _context(args)
    out = Path(args.out)
    runs: list[tuple[str, dict]] = []
    if args.table5:
        runs += [(f"mask-{m.label().replace(',', '_')}", {"mask": m.label()}) for m in TABLE5_MASKS]
    for m in args.mask or []:
        label = ValueMask.parse(m).label()
        runs.append((f"mask-{label.replace(',', '_')}", {"mask": label}))
    if args.shots_sweep:
        runs += [(f"shots-{n}", {"shots": int(n)}) for n in args.shots_sweep.split(",")]
    if args.history_sources:
        for src in args.history_sources.split(","):
            s = replace(settings, run=replace(settings.run, history_source=src))
            runs.append((f"history-{src}", {"settings": s}))
    if args.models:
        for m in args.models.split(","):
            s = replace(settings, backend=replace(settings.backend, model=m))
            runs.append((f"model-{m}", {"settings": s, "model": m}))
    if not runs:
        raise ConfigError("nothing to ablate; pass --mask, --table5, --shots-sweep, --history-sources or --models")
    manifest = []
    for label, opts in runs:
        s = opts.get("settings", settings)
        run_llm = llm
        if "model" in opts and s.backend.kind == "url":
            run_llm = make_backend(s, dataset.vocab, s.run.seed)
        cfg = experiment_config(s, mask=opts.get("mask"), shots=opts.get("shots"))
        report, _ = run_experiment(cfg, dataset, run_llm, index, out / label, samples=samples)
        manifest.append({"label": label, "header": report.header, "sr": report.sr, "macc": report.macc,
                         "miou": report.miou, "n": report.sample_count, "failed": report.failed})
        print(f"{label}\tSR={100 * report.sr:.2f}\tmAcc={100 * report.macc:.2f}\tmIoU={100 * report.miou:.2f}")
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_trace(args) -> int:
    path = Path(args.run)
    if path.is_dir():
        path = path / "traces.jsonl"
    for rec in read_jsonl(path):
        if rec.get("sample_id") == args.sample:
            trace = SearchTrace.from_record(rec)
            text = trace.to_json() if args.format == "json" else trace.render_text()
            if args.out:
                Path(args.out).write_text(text + "\n", encoding="utf-8")
            else:
                print(text)
            return 0
    print(f"sample {args.sample!r} not found in {path}", file=sys.stderr)
    return 1


SWEEPABLE = {"k_beam": int, "horizon": int, "noise": float, "actions": int, "branching": int, "k": int}


def _parse_sweeps(items: Sequence[str]) -> dict[str, list]:
    out: dict[str, list] = {}
    for item in items:
        key, sep, vals = item.partition("=")
        if not sep or key not in SWEEPABLE:
            raise ConfigError(f"bad sweep {item!r}; use KEY=v1,v2 with KEY in {sorted(SWEEPABLE)}")
        out[key] = [SWEEPABLE[key](v) for v in vals.split(",") if v]
    return out


def cmd_simulate(args) -> int:
    sweeps = _parse_sweeps(args.sweep or [])
    base = {"horizon": args.horizon, "noise": args.noise, "actions": args.actions,
            "branching": args.branching, "k": args.k}
    beams = sweeps.pop("k_beam", [args.beam])
    keys = sorted(sweeps)
    seeds = list(range(args.seed, args.seed + args.worlds))
    setup = Setup(args.setup)
    records: list = []
    points = []
    for combo in itertools.product(*(sweeps[k] for k in keys)):
        p = {**base, **dict(zip(keys, combo))}
        points += run_sweep(
            seeds, p["actions"], p["branching"], p["noise"], p["horizon"], args.queries,
            beam_widths=beams, k_samples=p["k"], setup=setup, records_out=records,
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(dumps_record(r) + "\n")
    rows = [pt.to_record() for pt in points]
    (out / "summary.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cols = ["setup", "actions", "branching", "noise", "horizon", "k", "k_beam", "seeds", "n", "sr", "se", "macc", "miou"]
    lines = ["\t".join(cols)] + ["\t".join(str(r[c]) for c in cols) for r in rows]
    (out / "summary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_import(args) -> int:
    if args.source == "coin":
        vocab, anns = import_coin(args.annotations)
    else:
        vocab, anns = import_crosstask(args.annotations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_vocabulary(out / VOCAB_FILE, vocab)
    save_annotations(out / ANNOTATIONS_FILE, anns)
    print(f"{len(vocab)} actions, {len(anns)} annotated videos -> {out}")
    return 0


def cmd_samples(args) -> int:
    dataset = load_dataset(Path(args.dataset))
    samples = build_samples(dataset, Setup(args.setup), args.horizon, args.split, args.history_source)
    n = save_samples(args.out, samples)
    print(f"{n} samples -> {args.out}")
    return 0


# -- parser ---------------------------------------------------------------------------


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML settings file")
    p.add_argument("--dataset", help="dataset directory written by `plan import`")
    p.add_argument("--samples", help="normalized sample file; overrides windowing of the annotations")
    p.add_argument("--setup", choices=[s.value for s in Setup])
    p.add_argument("--horizon", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--weights", help="vpa, pp, custom, or four numbers G,M,TG,P")
    p.add_argument("--custom-weights", dest="custom_weights", help="G,M,TG,P used with --weights custom")
    p.add_argument("--k", type=int, help="proposals sampled per expansion")
    p.add_argument("--beam", type=int, help="nodes kept per depth")
    p.add_argument("--aggregation", choices=["sum", "last-step"])
    p.add_argument("--seed", type=int)
    p.add_argument("--history-source", dest="history_source", choices=["predicted", "gt"])
    p.add_argument("--split")
    p.add_argument("--limit", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--backend", help="url | mock | replay")
    p.add_argument("--fixtures", help="mock fixture table or replay recording")
    p.add_argument("--record", help="append every backend interaction to this file")
    p.add_argument("--model")
    p.add_argument("--embedder", help="hash | cache:PATH | http:URL | sbert:CKPT")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plan", description="Propose-assess-search procedural planner")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="plan every sample of a dataset and score it")
    _run_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run several configurations and write a manifest")
    _run_options(p)
    p.add_argument("--mask", action="append", help="enabled components, e.g. G,M,TG,P (repeatable)")
    p.add_argument("--table5", action="store_true", help="the eight value-function masks")
    p.add_argument("--shots-sweep", dest="shots_sweep", help="comma-separated shot counts")
    p.add_argument("--history-sources", dest="history_sources", help="e.g. predicted,gt")
    p.add_argument("--models", help="comma-separated model names for the configured endpoint")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("trace", help="render the search tree of one sample")
    p.add_argument("--sample", required=True)
    p.add_argument("--run", required=True, help="run directory or traces.jsonl")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("simulate", help="planner on synthetic worlds with a noisy oracle")
    p.add_argument("--seed", type=int, default=0, help="first world seed")
    p.add_argument("--worlds", type=int, default=50)
    p.add_argument("--actions", type=int, default=12)
    p.add_argument("--branching", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--horizon", type=int, default=3)
    p.add_argument("--queries", type=int, default=100, help="queries per world")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--setup", choices=[s.value for s in Setup], default="vpa")
    p.add_argument("--sweep", action="append", help="KEY=v1,v2,... (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("import", help="convert raw COIN / CrossTask annotations")
    p.add_argument("source", choices=["coin", "crosstask"])
    p.add_argument("--annotations", required=True, help="COIN.json, or the CrossTask release directory")
    p.add_argument("--out", required=True, help="dataset directory")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("samples", help="write the normalized sample file for one setup and horizon")
    p.add_argument("--dataset", required=True)
    p.add_argument("--setup", choices=[s.value for s in Setup], required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--history-source", dest="history_source", choices=["predicted", "gt"], default="predicted")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_samples)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PlannerError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
