import json

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pasplan.datasets import import_coin
from pasplan.domain import AdmissibleActionSet
from pasplan.errors import GroundingError, ProviderError, TransportError
from pasplan.grounding import (
    HashEmbedder,
    HTTPEmbedder,
    PrecomputedEmbedder,
    VocabularyIndex,
    build_index,
    ground,
    normalize_text,
    write_embedding_cache,
)

VOCAB = AdmissibleActionSet.from_descriptions(["pour gas", "screw the cap", "start the engine", "check the oil"])


@pytest.mark.parametrize(
    "raw, norm",
    [("  Pour Gas. ", "pour gas"), ("2. screw the cap", "screw the cap"), ("- start   the engine!", "start the engine"),
     ("check the oil;\n", "check the oil"), ("add 2 cups", "add 2 cups")],
)
def test_normalize(raw, norm):
    assert normalize_text(raw) == norm


def test_exact_and_noisy_texts_ground():
    idx = build_index(VOCAB, HashEmbedder())
    for a in VOCAB:
        got, sim = ground(a.description, idx)
        assert got == a.index and sim >= 1 - 1e-6
    assert ground("Then, screw the cap back on.", idx)[0] == 1
    assert ground("1) Pour the gas", idx)[0] == 0


def test_ties_go_to_lowest_id():
    class Const:
        dimensionality = 2

        def embed(self, texts):
            return np.ones((len(texts), 2))

    idx = build_index(VOCAB, Const())
    a, s = ground("anything", idx)
    assert a == 0 and s == pytest.approx(1.0)


def test_empty_text():
    with pytest.raises(GroundingError):
        ground("  . ", build_index(VOCAB, HashEmbedder()))


def test_zero_vector_rejected():
    class Zero:
        dimensionality = 3

        def embed(self, texts):
            return np.zeros((len(texts), 3))

    with pytest.raises(ProviderError):
        build_index(VOCAB, Zero())


@given(st.text(min_size=1, max_size=60).filter(lambda t: normalize_text(t)))
def test_similarity_bounded(text):
    idx = build_index(VOCAB, HashEmbedder(64))
    a, s = ground(text, idx)
    assert a in VOCAB and -1.0 <= s <= 1.0


def test_cache_roundtrip_and_write_through(tmp_path):
    cache = tmp_path / "emb.jsonl"
    write_embedding_cache(cache, VOCAB.descriptions, HashEmbedder(32))
    offline = PrecomputedEmbedder(cache)
    idx = build_index(VOCAB, offline)
    assert ground("pour gas", idx)[0] == 0
    with pytest.raises(ProviderError):
        offline.embed(["never seen"])
    through = PrecomputedEmbedder(cache, fallback=HashEmbedder(32))
    through.embed(["never seen"])
    assert "never seen" in [json.loads(l)["text"] for l in cache.read_text().splitlines()]
    assert np.allclose(PrecomputedEmbedder(cache).embed(["never seen"]), HashEmbedder(32).embed(["never seen"]))


def test_http_embedder():
    inner = HashEmbedder(16)

    def handler(request):
        texts = json.loads(request.content)["texts"]
        return httpx.Response(200, json={"vectors": inner.embed(texts).tolist()})

    emb = HTTPEmbedder("http://emb", client=httpx.Client(transport=httpx.MockTransport(handler)))
    idx = build_index(VOCAB, emb)
    assert ground("start the engine", idx)[0] == 2 and emb.dimensionality == 16


def test_http_embedder_errors():
    bad_shape = httpx.MockTransport(lambda r: httpx.Response(200, json={"vectors": [[1.0, 0.0]]}))
    with pytest.raises(ProviderError):
        HTTPEmbedder("http://emb", client=httpx.Client(transport=bad_shape)).embed(["a", "b"])
    down = httpx.MockTransport(lambda r: httpx.Response(503))
    with pytest.raises(TransportError):
        HTTPEmbedder("http://emb", client=httpx.Client(transport=down)).embed(["a"])


def test_index_shape_check():
    with pytest.raises(ProviderError):
        VocabularyIndex(VOCAB, np.ones((2, 3)), HashEmbedder(3))


def test_coin_vocabulary_self_grounding(mini_coin):
    vocab, _ = import_coin(mini_coin)
    idx = build_index(vocab, HashEmbedder())
    for a in vocab:
        got, sim = ground(a.description, idx)
        assert got == a.index and sim >= 1 - 1e-6
