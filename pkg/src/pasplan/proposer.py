"""Prompt templates and language-model backends.

A backend is anything with a ``complete`` method matching :class:`Backend`.
Implementations here: an HTTP completion client, a fixture-driven mock, a
function adapter, a seeded pseudo-random mock, and record/replay wrappers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence, Union

import httpx

from .domain import PlanningQuery, Setup, Step
from .errors import (
    CapabilityError,
    ContractViolation,
    EmptyGenerationError,
    ReplayMissError,
    ScoringError,
    TransportError,
)

log = logging.getLogger(__name__)

SHOT_LIMITS = {Setup.VPA: 3, Setup.PP: 10}

DEFAULT_TEMPERATURE = 0.8
DEFAULT_MAX_TOKENS = 24
DEFAULT_TOP_LOGPROBS = 5


@dataclass(frozen=True)
class BackendSample:
    text: str
    token_logprobs: tuple[float, ...]
    first_token_top_logits: Mapping[str, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "text": self.text,
            "token_logprobs": list(self.token_logprobs),
            "first_token_top_logits": dict(self.first_token_top_logits),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "BackendSample":
        return cls(
            str(rec["text"]),
            tuple(float(x) for x in rec.get("token_logprobs", ())),
            {str(k): float(v) for k, v in rec.get("first_token_top_logits", {}).items()},
        )


class Backend(Protocol):
    def complete(
        self, prompt: str, *, n: int, temperature: float, max_tokens: int, logprobs: int
    ) -> list[BackendSample]: ...


# -- prompt templates ----------------------------------------------------------

SEP = "; "
NONE = "(none)"

NEXT_ACTION_HEADER = (
    "You are an assistant that helps people carry out procedural tasks.\n"
    "Given the goal and the steps observed so far, predict the next step. "
    "Answer with one short step description."
)
PLAN_EVAL_HEADER = (
    "You are an assistant that checks plans for procedural tasks.\n"
    "Given the goal and the steps observed so far, judge the proposed plan."
)
NEXT_ACTION_CUE = "Next step:"
PLAN_EVAL_QUESTION = "Is this plan a correct way to make progress toward the goal? Answer YES or NO."

GOAL = "Goal: "
OBSERVED = "Observed steps: "
START = "Start step: "
GOAL_STEP = "Goal step: "
PREDICTED = "Predicted steps: "
PLAN = "Plan: "
EXAMPLE_STEPS = "Steps: "


def _clean(desc: str) -> str:
    # the separator must stay unambiguous for the simulator's parser
    return desc.replace(";", ",").replace("\n", " ").strip()


def _join(descs: Sequence[str]) -> str:
    return SEP.join(_clean(d) for d in descs) if descs else NONE


@dataclass(frozen=True)
class PromptTemplate:
    kind: str  # "next_action" | "plan_evaluation"
    header: str
    in_context_examples: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def _context_lines(self, query: PlanningQuery) -> list[str]:
        if query.setup is Setup.PP:
            return [
                START + _clean(query.observation.start_step.description),
                GOAL_STEP + _clean(query.goal.goal_step.description),
            ]
        return [
            GOAL + _clean(query.goal.text),
            OBSERVED + _join([s.description for s in query.observation.history_steps]),
        ]

    def render(self, query: PlanningQuery, partial: Sequence[Step]) -> str:
        blocks = [self.header]
        for goal, plan in self.in_context_examples:
            blocks.append(f"{GOAL}{_clean(goal)}\n{EXAMPLE_STEPS}{_join(plan)}")
        lines = self._context_lines(query)
        descs = [s.description for s in partial]
        if self.kind == "next_action":
            lines += [PREDICTED + _join(descs), NEXT_ACTION_CUE]
        else:
            lines += [PLAN + _join(descs), PLAN_EVAL_QUESTION]
        blocks.append("\n".join(lines))
        return "\n\n".join(blocks)


Example = tuple[str, Sequence[str]]


def _examples(query: PlanningQuery, examples: Sequence[Example], shot_limit: Optional[int]):
    limit = SHOT_LIMITS[query.setup] if shot_limit is None else shot_limit
    if len(examples) > limit:
        raise ContractViolation(
            f"{len(examples)} in-context examples exceed the {query.setup.value} limit of {limit}"
        )
    return tuple((g, tuple(p)) for g, p in examples)


def build_next_action_prompt(
    query: PlanningQuery,
    partial: Sequence[Step],
    examples: Sequence[Example] = (),
    shot_limit: Optional[int] = None,
) -> str:
    tmpl = PromptTemplate("next_action", NEXT_ACTION_HEADER, _examples(query, examples, shot_limit))
    return tmpl.render(query, partial)


def build_plan_evaluation_prompt(
    query: PlanningQuery,
    partial: Sequence[Step],
    examples: Sequence[Example] = (),
    shot_limit: Optional[int] = None,
) -> str:
    tmpl = PromptTemplate("plan_evaluation", PLAN_EVAL_HEADER, _examples(query, examples, shot_limit))
    return tmpl.render(query, partial)


@dataclass(frozen=True)
class ParsedPrompt:
    kind: str
    goal_text: Optional[str]
    observed: tuple[str, ...]
    start: Optional[str]
    goal_step: Optional[str]
    plan: tuple[str, ...]
    examples: tuple[tuple[str, tuple[str, ...]], ...]


def _split(s: str) -> tuple[str, ...]:
    s = s.strip()
    return () if s == NONE else tuple(x.strip() for x in s.split(SEP.strip()))


def parse_prompt(prompt: str) -> ParsedPrompt:
    """Inverse of the two templates; used by simulated backends."""
    if prompt.startswith(NEXT_ACTION_HEADER):
        kind = "next_action"
    elif prompt.startswith(PLAN_EVAL_HEADER):
        kind = "plan_evaluation"
    else:
        raise ValueError("prompt was not rendered by a known template")
    blocks = prompt.split("\n\n")
    examples = []
    for b in blocks[1:-1]:
        g, s = b.split("\n", 1)
        examples.append((g[len(GOAL):], _split(s[len(EXAMPLE_STEPS):])))
    fields = {}
    for line in blocks[-1].split("\n"):
        for key in (GOAL, OBSERVED, START, GOAL_STEP, PREDICTED, PLAN):
            if line.startswith(key):
                fields[key] = line[len(key):]
                break
    plan_line = fields.get(PREDICTED if kind == "next_action" else PLAN, NONE)
    return ParsedPrompt(
        kind,
        fields.get(GOAL),
        _split(fields[OBSERVED]) if OBSERVED in fields else (),
        fields.get(START),
        fields.get(GOAL_STEP),
        _split(plan_line),
        tuple(examples),
    )


# -- sampling and YES/NO extraction ------------------------------------------------


def sample_candidates(
    backend: Backend,
    prompt: str,
    k: int,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    logprobs: int = DEFAULT_TOP_LOGPROBS,
) -> list[BackendSample]:
    """Exactly ``k`` non-empty samples; empty generations are resampled once."""
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    kw = dict(temperature=temperature, max_tokens=max_tokens, logprobs=logprobs)
    samples = [s for s in backend.complete(prompt, n=k, **kw) if s.text.strip()]
    missing = k - len(samples)
    if missing > 0:
        log.debug("resampling %d empty generations", missing)
        samples += [s for s in backend.complete(prompt, n=missing, **kw) if s.text.strip()]
    if len(samples) < k:
        raise EmptyGenerationError(f"backend returned {k - len(samples)} empty generations after one resample")
    for s in samples[:k]:
        if not s.token_logprobs:
            raise CapabilityError("backend sample carries no token log-probabilities")
    return samples[:k]


YES, NO = "YES", "NO"


def _fold(token: str) -> str:
    return token.strip().strip("▁Ġ").upper()


def evaluate_yes_no(backend: Backend, prompt: str, logprobs: int = DEFAULT_TOP_LOGPROBS) -> tuple[float, float]:
    """First-position scores of the YES and NO tokens (case-insensitive)."""
    (sample,) = backend.complete(prompt, n=1, temperature=0.0, max_tokens=1, logprobs=logprobs)[:1]
    top = sample.first_token_top_logits
    found: dict[str, float] = {}
    for tok, score in top.items():
        key = _fold(tok)
        if key in (YES, NO):
            found[key] = max(score, found.get(key, -math.inf))
    if not found:
        raise ScoringError("neither YES nor NO among the first-token candidates", top.keys())
    # an absent token scored at most the lowest value the backend reported
    floor = min(top.values())
    return found.get(YES, floor), found.get(NO, floor)


# -- backends ----------------------------------------------------------------------


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class FunctionBackend:
    """Adapter turning ``fn(prompt, n) -> list[BackendSample]`` into a backend."""

    def __init__(self, fn: Callable[[str, int], Sequence[BackendSample]]):
        self.fn = fn
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt, *, n, temperature, max_tokens, logprobs):
        with self._lock:
            self.calls += 1
        return list(self.fn(prompt, n))


class MockBackend:
    """Fixture-table backend.

    Fixture format::

        {"entries": [{"hash": <sha256 of prompt>, "samples": [...]},
                     {"pattern": <regex searched in prompt>, "samples": [...]}],
         "default": [...]}

    Each sample is ``{text, token_logprobs, first_token_top_logits}``. A
    request for ``n`` samples returns the first ``n`` entries, cycling when
    the table is shorter.
    """

    def __init__(self, entries: Sequence[Mapping] = (), default: Sequence[Mapping] = ()):
        self._hash: dict[str, list[BackendSample]] = {}
        self._patterns: list[tuple[re.Pattern, list[BackendSample]]] = []
        for e in entries:
            samples = [s if isinstance(s, BackendSample) else BackendSample.from_record(s) for s in e["samples"]]
            if "hash" in e:
                self._hash[e["hash"]] = samples
            else:
                self._patterns.append((re.compile(e["pattern"]), samples))
        self._default = [s if isinstance(s, BackendSample) else BackendSample.from_record(s) for s in default]
        self.calls = 0

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "MockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data.get("entries", ()), data.get("default", ()))

    def lookup(self, prompt: str) -> list[BackendSample]:
        hit = self._hash.get(prompt_hash(prompt))
        if hit is not None:
            return hit
        for pat, samples in self._patterns:
            if pat.search(prompt):
                return samples
        if self._default:
            return self._default
        raise TransportError("mock backend has no fixture matching this prompt")

    def complete(self, prompt, *, n, temperature, max_tokens, logprobs):
        self.calls += 1
        table = self.lookup(prompt)
        return [table[i % len(table)] for i in range(n)]


def _seeded_rng(seed: int, *parts: object) -> random.Random:
    h = hashlib.sha256(repr((seed,) + parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(h[:8], "big"))


class SeededMockBackend:
    """Deterministic stand-in for a language model over a fixed vocabulary.

    Proposals are vocabulary descriptions chosen by a generator seeded from
    ``(seed, prompt)``; YES/NO logits come from the same generator. Useful for
    exercising the whole pipeline offline, not for measuring quality.
    """

    def __init__(self, descriptions: Sequence[str], seed: int = 0):
        if not descriptions:
            raise ContractViolation("seeded mock needs a nonempty vocabulary")
        self.descriptions = list(descriptions)
        self.seed = seed

    def complete(self, prompt, *, n, temperature, max_tokens, logprobs):
        rng = _seeded_rng(self.seed, prompt)
        out = []
        for _ in range(n):
            text = rng.choice(self.descriptions)
            ntok = max(1, len(text.split()))
            out.append(
                BackendSample(
                    text,
                    tuple(-rng.random() * 3.0 for _ in range(ntok)),
                    {YES: rng.gauss(0.0, 1.0), NO: rng.gauss(0.0, 1.0)},
                )
            )
        return out


class CompletionClient:
    """Completion-style HTTP backend (OpenAI-compatible ``/completions`` shape).

    Request: ``{model, prompt, n, temperature, max_tokens, logprobs, stop}``.
    Response: ``choices[i].text`` and ``choices[i].logprobs`` carrying
    ``token_logprobs`` and ``top_logprobs`` (list of token->logprob maps).
    """

    def __init__(
        self,
        url: str,
        model: str = "",
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        stop: Optional[Sequence[str]] = ("\n",),
        seed: Optional[int] = None,
        client: Optional[httpx.Client] = None,
    ):
        self.url = url
        self.model = model
        self.max_retries = max_retries
        self.stop = list(stop) if stop else None
        self.seed = seed
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers

    def _post(self, payload: dict) -> dict:
        delay = 0.5
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(self.url, json=payload, headers=self._headers)
            except httpx.HTTPError as e:
                err: Exception = e
            else:
                if resp.status_code == 200:
                    return resp.json()
                err = TransportError(f"backend returned HTTP {resp.status_code}: {resp.text[:200]}")
                if resp.status_code < 500 and resp.status_code != 429:
                    raise err
            if attempt < self.max_retries:
                log.warning("backend request failed (%s); retry %d/%d", err, attempt + 1, self.max_retries)
                time.sleep(delay)
                delay *= 2
        raise TransportError(f"backend unreachable after {self.max_retries + 1} attempts: {err}")

    def complete(self, prompt, *, n, temperature, max_tokens, logprobs):
        payload = {
            "model": self.model,
            "prompt": prompt,
            "n": n,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "logprobs": logprobs,
        }
        if self.stop and max_tokens > 1:
            payload["stop"] = self.stop
        if self.seed is not None:
            payload["seed"] = self.seed
        data = self._post(payload)
        choices = sorted(data.get("choices", []), key=lambda c: c.get("index", 0))
        out = []
        for c in choices:
            lp = c.get("logprobs") or {}
            toks = lp.get("token_logprobs") or []
            tops = lp.get("top_logprobs") or [{}]
            out.append(
                BackendSample(
                    c.get("text", "").strip(),
                    tuple(float(x) for x in toks if x is not None),
                    {str(k): float(v) for k, v in (tops[0] or {}).items()},
                )
            )
        return out

    def check_capabilities(self) -> None:
        """Probe once at startup; raise if the server omits log-probabilities."""
        (s,) = self.complete("Hello", n=1, temperature=0.0, max_tokens=1, logprobs=DEFAULT_TOP_LOGPROBS)[:1]
        if not s.token_logprobs or not s.first_token_top_logits:
            raise CapabilityError(f"backend at {self.url} does not return token log-probabilities")


def _request_key(prompt: str, n: int, temperature: float, max_tokens: int, logprobs: int) -> str:
    return f"{prompt_hash(prompt)}|n={n}|t={temperature!r}|m={max_tokens}|l={logprobs}"


class RecordingBackend:
    """Pass-through wrapper that appends every interaction to a fixture file."""

    def __init__(self, inner: Backend, path: Union[str, Path]):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def complete(self, prompt, *, n, temperature, max_tokens, logprobs):
        out = self.inner.complete(prompt, n=n, temperature=temperature, max_tokens=max_tokens, logprobs=logprobs)
        rec = {
            "key": _request_key(prompt, n, temperature, max_tokens, logprobs),
            "samples": [s.to_record() for s in out],
        }
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return out


class ReplayBackend:
    """Serves recorded interactions; repeated identical requests replay in order."""

    def __init__(self, path: Union[str, Path]):
        self._table: dict[str, list[list[BackendSample]]] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    samples = [BackendSample.from_record(s) for s in rec["samples"]]
                    self._table.setdefault(rec["key"], []).append(samples)
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete(self, prompt, *, n, temperature, max_tokens, logprobs):
        key = _request_key(prompt, n, temperature, max_tokens, logprobs)
        with self._lock:
            responses = self._table.get(key)
            if not responses:
                raise ReplayMissError(f"no recorded response for request {key}")
            i = self._cursor.get(key, 0)
            self._cursor[key] = i + 1
        return list(responses[min(i, len(responses) - 1)])
