import hashlib

import httpx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from atommem import prompts
from atommem.errors import InvalidArgument, ProviderError
from atommem.providers import (
    CachedEmbedder,
    ChatProviderConfig,
    HashingEmbedder,
    RemoteChatProvider,
    RemoteEmbedder,
    ScriptedChatProvider,
    chat,
)
from atommem.text import tokenize


def test_scripted_lookup_and_missing_prompt():
    p = ScriptedChatProvider({"hello": "world"})
    assert chat("hello", p) == "world"
    with pytest.raises(ProviderError):
        chat("other", p)
    with pytest.raises(InvalidArgument):
        chat("", p)


def test_retry_then_success():
    p = ScriptedChatProvider()
    p.register("q", [ProviderError("timeout"), "ok"])
    assert chat("q", p, ChatProviderConfig(max_retries=1)) == "ok"
    assert len(p.calls) == 2


def test_retries_exhausted():
    p = ScriptedChatProvider()
    p.register("q", [ProviderError("a"), ProviderError("b"), "late"])
    with pytest.raises(ProviderError):
        chat("q", p, ChatProviderConfig(max_retries=1))


def _oracle_embedding(text, dim):
    vec = np.zeros(dim)
    for tok in tokenize(text):
        value = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "big")
        vec[value % dim] += -1.0 if value >> 63 else 1.0
    n = np.linalg.norm(vec)
    if n == 0:
        vec[0] = 1.0
        return vec
    return vec / n


@given(st.text(max_size=80))
def test_hashing_embedder_matches_rule_and_is_unit_norm(text):
    emb = HashingEmbedder(64)
    v = emb.embed(text)
    assert np.allclose(v, _oracle_embedding(text, 64))
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-6)
    assert np.array_equal(v, emb.embed(text))


def test_empty_text_maps_to_first_basis_vector():
    assert np.array_equal(HashingEmbedder(8).embed(""), np.eye(8)[0])


def test_cached_embedder_returns_copies():
    c = CachedEmbedder(HashingEmbedder(16))
    a = c.embed("tea")
    a[:] = 0
    assert np.linalg.norm(c.embed("tea")) == pytest.approx(1.0)


class _Resp:
    def __init__(self, payload, status=200):
        self.payload, self.status = payload, status

    def raise_for_status(self):
        if self.status >= 400:
            raise httpx.HTTPStatusError("bad", request=httpx.Request("POST", "http://x"),
                                        response=httpx.Response(self.status))

    def json(self):
        return self.payload


def test_remote_chat_request_shape(monkeypatch):
    seen = {}

    def fake_post(url, json, headers, timeout):
        seen.update(url=url, body=json, headers=headers)
        return _Resp({"choices": [{"message": {"content": "hi"}}]})

    monkeypatch.setattr(httpx, "post", fake_post)
    p = RemoteChatProvider("http://llm/v1", api_key="k")
    assert p.complete("prompt", ChatProviderConfig(model="m")) == "hi"
    assert seen["url"] == "http://llm/v1/chat/completions"
    assert seen["body"]["temperature"] == 0.0 and seen["body"]["model"] == "m"
    assert seen["headers"] == {"Authorization": "Bearer k"}


def test_remote_failures_become_provider_errors(monkeypatch):
    monkeypatch.setattr(httpx, "post", lambda *a, **k: _Resp({}, 500))
    with pytest.raises(ProviderError):
        RemoteChatProvider("http://llm/v1").complete("p", ChatProviderConfig())
    monkeypatch.setattr(httpx, "post", lambda *a, **k: _Resp({"data": [{"embedding": [0.0, 3.0]}]}))
    assert np.allclose(RemoteEmbedder(2, endpoint="http://e").embed("x"), [0, 1])
    with pytest.raises(ProviderError):
        RemoteEmbedder(3, endpoint="http://e").embed("x")
    monkeypatch.delenv("ATOMMEM_CHAT_ENDPOINT", raising=False)
    with pytest.raises(ProviderError):
        RemoteChatProvider().complete("p", ChatProviderConfig())


def test_prompt_templates_render_placeholders():
    out = prompts.render(prompts.PLANNING_PROMPT, user_query="Where is Bob?")
    assert "Where is Bob?" in out and "{user_query}" not in out
    for template, keys in [(prompts.EXTRACTION_PROMPT, ("window_start_time", "speakers_list", "dialogue_window")),
                           (prompts.ANSWER_PROMPT, ("user_query", "retrieved_abstracts", "retrieved_units"))]:
        for key in keys:
            assert "{" + key + "}" in template
