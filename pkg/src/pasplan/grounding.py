"""Map free-form generated text onto the admissible action vocabulary."""

from __future__ import annotations

import hashlib
import json
import re
import threading
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import httpx
import numpy as np

from .domain import ActionId, AdmissibleActionSet
from .errors import ContractViolation, GroundingError, ProviderError, TransportError

_WS = re.compile(r"\s+")
_TRAILING_PUNCT = re.compile(r"[\s.,;:!?\"']+$")
_LIST_MARKER = re.compile(r"^(?:\d+[.)]|[-*\u2022])\s+")


def normalize_text(text: str) -> str:
    """Lowercase, trim, collapse whitespace, drop trailing punctuation.

    Leading list markers such as ``"2. "`` or ``"- "`` are also removed since
    sampled continuations often carry them.
    """
    t = _WS.sub(" ", text).strip().lower()
    t = _LIST_MARKER.sub("", t)
    return _TRAILING_PUNCT.sub("", t)


class EmbeddingProvider(Protocol):
    dimensionality: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashEmbedder:
    """Deterministic feature-hashing embedder for offline runs and tests.

    Words and character trigrams are hashed (sha1, so stable across
    processes) into signed buckets. Texts sharing words land close together;
    unrelated texts are near-orthogonal.
    """

    source = "deterministic-test"

    def __init__(self, dimensionality: int = 256):
        self.dimensionality = dimensionality

    def _features(self, text: str):
        words = text.split()
        yield from ((w, 1.0) for w in words)
        padded = f" {text} "
        yield from ((padded[i : i + 3], 0.5) for i in range(len(padded) - 2))

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimensionality))
        for row, text in enumerate(texts):
            for feat, w in self._features(text):
                h = hashlib.sha1(feat.encode("utf-8")).digest()
                idx = int.from_bytes(h[:4], "little") % self.dimensionality
                sign = 1.0 if h[4] & 1 else -1.0
                out[row, idx] += sign * w
        return out


class PrecomputedEmbedder:
    """Embeddings read from a cache file of ``{text, vector}`` lines.

    With ``fallback`` set, misses are fetched from it and appended to the
    cache file (write-through). Without one, a miss is a provider error.
    """

    source = "precomputed-file"

    def __init__(self, path: Union[str, Path], fallback: Optional[EmbeddingProvider] = None):
        self.path = Path(path)
        self.fallback = fallback
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.dimensionality = fallback.dimensionality if fallback is not None else 0
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._store(normalize_text(rec["text"]), np.asarray(rec["vector"], dtype=float))

    def _store(self, key: str, vec: np.ndarray) -> None:
        if self.dimensionality and vec.shape != (self.dimensionality,):
            raise ProviderError(f"cached vector for {key!r} has shape {vec.shape}, expected ({self.dimensionality},)")
        self.dimensionality = vec.shape[0]
        self._cache[key] = vec

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        keys = [normalize_text(t) for t in texts]
        with self._lock:
            missing = sorted({k for k in keys if k not in self._cache})
            if missing:
                if self.fallback is None:
                    raise ProviderError(f"no cached embedding for {missing[0]!r} ({len(missing)} missing)")
                vecs = np.asarray(self.fallback.embed(missing), dtype=float)
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    for k, v in zip(missing, vecs):
                        self._store(k, v)
                        fh.write(json.dumps({"text": k, "vector": v.tolist()}) + "\n")
            return np.stack([self._cache[k] for k in keys]) if keys else np.zeros((0, self.dimensionality))


def write_embedding_cache(path: Union[str, Path], texts: Sequence[str], provider: EmbeddingProvider) -> None:
    keys = [normalize_text(t) for t in texts]
    vecs = provider.embed(keys)
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in zip(keys, vecs):
            fh.write(json.dumps({"text": k, "vector": [float(x) for x in v]}) + "\n")


class HTTPEmbedder:
    """Embedding service: POST ``{"texts": [...]}`` -> ``{"vectors": [[...], ...]}``."""

    source = "http-endpoint"

    def __init__(self, url: str, dimensionality: int = 0, timeout: float = 30.0, client: Optional[httpx.Client] = None):
        self.url = url
        self.dimensionality = dimensionality
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        try:
            resp = self._client.post(self.url, json={"texts": list(texts)})
        except httpx.HTTPError as e:
            raise TransportError(f"embedding endpoint unreachable: {e}") from e
        if resp.status_code != 200:
            raise TransportError(f"embedding endpoint returned HTTP {resp.status_code}")
        vecs = np.asarray(resp.json()["vectors"], dtype=float)
        if vecs.ndim != 2 or vecs.shape[0] != len(texts):
            raise ProviderError(f"endpoint returned vectors of shape {vecs.shape} for {len(texts)} texts")
        if self.dimensionality and vecs.shape[1] != self.dimensionality:
            raise ProviderError(f"dimensionality changed from {self.dimensionality} to {vecs.shape[1]}")
        self.dimensionality = vecs.shape[1]
        return vecs


class SentenceTransformerEmbedder:
    """Local sentence-transformers model; imported lazily (optional extra)."""

    source = "sentence-transformers"

    def __init__(self, checkpoint: str = "all-MiniLM-L6-v2"):
        from sentence_transformers import SentenceTransformer

        self.model = SentenceTransformer(checkpoint)
        self.dimensionality = int(self.model.get_sentence_embedding_dimension())

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.asarray(self.model.encode(list(texts), convert_to_numpy=True), dtype=float)


def _unit_rows(vecs: np.ndarray, what: str) -> np.ndarray:
    vecs = np.asarray(vecs, dtype=float)
    if not np.all(np.isfinite(vecs)):
        raise ProviderError(f"non-finite entries in embeddings of {what}")
    norms = np.linalg.norm(vecs, axis=1)
    if np.any(norms == 0):
        bad = int(np.argmin(norms))
        raise ProviderError(f"zero embedding for {what} row {bad}; cannot normalize")
    return vecs / norms[:, None]


class VocabularyIndex:
    """Unit-normalized embeddings of every admissible action, in vocabulary order."""

    def __init__(self, vocab: AdmissibleActionSet, vectors: np.ndarray, provider: EmbeddingProvider):
        if len(vocab) == 0:
            raise ContractViolation("cannot index an empty vocabulary")
        if vectors.shape[0] != len(vocab):
            raise ProviderError(f"{vectors.shape[0]} vectors for {len(vocab)} actions")
        self.vocab = vocab
        self.vectors = vectors
        self.provider = provider
        self._memo: dict[str, tuple[ActionId, float]] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.vocab)

    def similarities(self, text: str) -> np.ndarray:
        q = _unit_rows(self.provider.embed([text]), repr(text))[0]
        if q.shape[0] != self.vectors.shape[1]:
            raise ProviderError(f"query dimensionality {q.shape[0]} != index dimensionality {self.vectors.shape[1]}")
        return self.vectors @ q

    def ground(self, text: str) -> tuple[ActionId, float]:
        key = normalize_text(text)
        if not key:
            raise GroundingError(f"nothing to ground in {text!r}")
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        sims = self.similarities(key)
        best = int(np.argmax(sims))  # first maximum -> lowest id on ties
        result = (best, float(np.clip(sims[best], -1.0, 1.0)))
        with self._lock:
            self._memo[key] = result
        return result


def build_index(vocab: AdmissibleActionSet, provider: EmbeddingProvider) -> VocabularyIndex:
    texts = [normalize_text(d) for d in vocab.descriptions]
    vecs = np.asarray(provider.embed(texts), dtype=float)
    if vecs.ndim != 2 or vecs.shape[0] != len(texts):
        raise ProviderError(f"provider returned shape {vecs.shape} for {len(texts)} descriptions")
    if provider.dimensionality and vecs.shape[1] != provider.dimensionality:
        raise ProviderError(f"provider declared d={provider.dimensionality} but returned d={vecs.shape[1]}")
    return VocabularyIndex(vocab, _unit_rows(vecs, "vocabulary"), provider)


def ground(text: str, index: VocabularyIndex) -> tuple[ActionId, float]:
    """Most cosine-similar admissible action and that similarity."""
    return index.ground(text)
