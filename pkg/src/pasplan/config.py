"""Settings file (TOML) plus environment overrides for credentials.

Example::

    [backend]
    kind = "url"                # url | mock | replay
    url = "http://localhost:8000/v1/completions"
    model = "llama-2-70b"

    [embedding]
    provider = "sbert:all-MiniLM-L6-v2"   # hash | cache:PATH | http:URL | sbert:CKPT

    [run]
    setup = "vpa"
    horizon = 3
    beam = 3

Environment: ``PLAN_BACKEND_URL``, ``PLAN_API_KEY``, ``PLAN_MODEL``,
``PLAN_EMBED_URL``.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .assessment import DEFAULT_EPSILON
from .errors import ConfigError
from .proposer import DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, DEFAULT_TOP_LOGPROBS

ENV_BACKEND_URL = "PLAN_BACKEND_URL"
ENV_API_KEY = "PLAN_API_KEY"
ENV_MODEL = "PLAN_MODEL"
ENV_EMBED_URL = "PLAN_EMBED_URL"


@dataclass
class BackendSettings:
    kind: str = "mock"
    url: str = ""
    model: str = ""
    api_key: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 3
    fixtures: Optional[str] = None
    record: Optional[str] = None


@dataclass
class EmbeddingSettings:
    provider: str = "hash"
    dim: int = 256


@dataclass
class RunSettings:
    setup: str = "vpa"
    horizon: int = 3
    shots: int = 0
    weights: str = "vpa"
    custom_weights: str = ""
    mask: str = "G,M,TG,P"
    k: int = 10
    beam: int = 3
    aggregation: str = "sum"
    seed: int = 0
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    top_logprobs: int = DEFAULT_TOP_LOGPROBS
    epsilon: float = DEFAULT_EPSILON
    history_source: str = "predicted"
    split: str = "test"
    limit: Optional[int] = None
    workers: int = 1


@dataclass
class Settings:
    backend: BackendSettings = field(default_factory=BackendSettings)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)
    run: RunSettings = field(default_factory=RunSettings)


def _section(cls, data: Mapping[str, Any], name: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(unknown)}")
    return cls(**data)


def load_settings(path: Optional[Union[str, Path]] = None, env: Optional[Mapping[str, str]] = None) -> Settings:
    """Defaults, then the TOML file (if any), then environment credentials."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    extra = sorted(set(data) - {"backend", "embedding", "run"})
    if extra:
        raise ConfigError(f"unknown config sections: {', '.join(extra)}")
    s = Settings(
        _section(BackendSettings, data.get("backend", {}), "backend"),
        _section(EmbeddingSettings, data.get("embedding", {}), "embedding"),
        _section(RunSettings, data.get("run", {}), "run"),
    )
    env = os.environ if env is None else env
    b = s.backend
    if env.get(ENV_BACKEND_URL):
        b = replace(b, url=env[ENV_BACKEND_URL])
    if env.get(ENV_API_KEY):
        b = replace(b, api_key=env[ENV_API_KEY])
    if env.get(ENV_MODEL):
        b = replace(b, model=env[ENV_MODEL])
    s.backend = b
    if env.get(ENV_EMBED_URL) and s.embedding.provider == "hash":
        s.embedding = replace(s.embedding, provider=f"http:{env[ENV_EMBED_URL]}")
    return s
