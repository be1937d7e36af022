"""Chat-completion and embedding backends.

Two families live here: deterministic in-process doubles used by the tests
and offline mode, and thin HTTP clients for OpenAI-compatible servers. The
remote clients read their settings from the environment:

``ATOMMEM_CHAT_ENDPOINT``   base URL of the chat server (``.../v1``)
``ATOMMEM_CHAT_MODEL``      chat model name
``ATOMMEM_EMBED_ENDPOINT``  base URL of the embedding server (defaults to the chat one)
``ATOMMEM_EMBED_MODEL``     embedding model name
``ATOMMEM_API_KEY``         bearer token sent to both
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
from collections import deque
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from atommem.errors import InvalidArgument, ProviderError
from atommem.text import tokenize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChatProviderConfig:
    endpoint: str = ""
    model: str = "gpt-4.1-mini"
    temperature: float = 0.0
    timeout: float = 60.0
    max_retries: int = 1


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    model: str = "feature-hash"
    dimension: int = 1024

    def __post_init__(self):
        if self.dimension <= 0:
            raise InvalidArgument("embedding dimension must be positive")


class ChatProvider(Protocol):
    def complete(self, prompt: str, config: ChatProviderConfig) -> str: ...


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def chat(prompt: str, provider: ChatProvider, config: ChatProviderConfig | None = None) -> str:
    """Call ``provider`` with up to ``config.max_retries`` retries on failure."""
    if not prompt:
        raise InvalidArgument("prompt must be non-empty")
    config = config or ChatProviderConfig()
    attempts = max(0, config.max_retries) + 1
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return provider.complete(prompt, config)
        except ProviderError as exc:
            last = exc
            logger.warning("chat attempt %d/%d failed: %s", attempt + 1, attempts, exc)
    raise ProviderError(f"chat failed after {attempts} attempts: {last}")


class ScriptedChatProvider:
    """Replies from a table keyed by the SHA-256 of the prompt.

    A registered reply may be a string, an exception instance (raised), or a
    list of those consumed one per call, the last one repeating.
    """

    def __init__(self, replies: dict[str, object] | None = None):
        self._lock = threading.Lock()
        self._replies: dict[str, deque] = {}
        self.calls: list[str] = []
        for prompt, reply in (replies or {}).items():
            self.register(prompt, reply)

    def register(self, prompt: str, reply) -> None:
        seq = list(reply) if isinstance(reply, (list, tuple)) else [reply]
        with self._lock:
            self._replies[prompt_key(prompt)] = deque(seq)

    def complete(self, prompt: str, config: ChatProviderConfig) -> str:
        key = prompt_key(prompt)
        with self._lock:
            self.calls.append(key)
            queue = self._replies.get(key)
            if queue is None:
                raise ProviderError(f"no scripted reply for prompt {key[:12]}")
            reply = queue.popleft() if len(queue) > 1 else queue[0]
        if isinstance(reply, BaseException):
            raise reply
        return str(reply)


class CallableChatProvider:
    """Adapts a plain ``prompt -> reply`` function; handy for fuzzing."""

    def __init__(self, fn):
        self._fn = fn

    def complete(self, prompt: str, config: ChatProviderConfig) -> str:
        try:
            return self._fn(prompt)
        except ProviderError:
            raise
        except Exception as exc:
            raise ProviderError(str(exc)) from exc


class RemoteChatProvider:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(self, endpoint: str | None = None, api_key: str | None = None):
        self.endpoint = (endpoint or os.environ.get("ATOMMEM_CHAT_ENDPOINT", "")).rstrip("/")
        self.api_key = api_key or os.environ.get("ATOMMEM_API_KEY", "")

    def complete(self, prompt: str, config: ChatProviderConfig) -> str:
        import httpx

        endpoint = (config.endpoint or self.endpoint).rstrip("/")
        if not endpoint:
            raise ProviderError("no chat endpoint configured (ATOMMEM_CHAT_ENDPOINT)")
        body = {
            "model": config.model,
            "temperature": config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(f"{endpoint}/chat/completions", json=body, headers=headers, timeout=config.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"chat transport error: {exc}") from exc


def _bucket(token: str, dimension: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "big")
    sign = 1.0 if (value >> 63) == 0 else -1.0
    return value % dimension, sign


class HashingEmbedder:
    """Signed feature hashing over :func:`tokenize` output, L2-normalized.

    Text with no tokens maps to the first basis vector.
    """

    def __init__(self, dimension: int = 1024):
        if dimension <= 0:
            raise InvalidArgument("embedding dimension must be positive")
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokenize(text):
            idx, sign = _bucket(tok, self.dimension)
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[:] = 0.0
            vec[0] = 1.0
            return vec
        return vec / norm


class RemoteEmbedder:
    """OpenAI-compatible ``/embeddings`` client."""

    def __init__(self, dimension: int, model: str | None = None, endpoint: str | None = None,
                 api_key: str | None = None, timeout: float = 60.0):
        self.dimension = dimension
        self.model = model or os.environ.get("ATOMMEM_EMBED_MODEL", "text-embedding")
        self.endpoint = (
            endpoint
            or os.environ.get("ATOMMEM_EMBED_ENDPOINT")
            or os.environ.get("ATOMMEM_CHAT_ENDPOINT", "")
        ).rstrip("/")
        self.api_key = api_key or os.environ.get("ATOMMEM_API_KEY", "")
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        import httpx

        if not self.endpoint:
            raise ProviderError("no embedding endpoint configured (ATOMMEM_EMBED_ENDPOINT)")
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(f"{self.endpoint}/embeddings", json={"model": self.model, "input": text},
                              headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"embedding transport error: {exc}") from exc
        if vec.shape != (self.dimension,):
            raise ProviderError(f"embedding has shape {vec.shape}, expected ({self.dimension},)")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ProviderError("embedding server returned a zero vector")
        return vec / norm


class CachedEmbedder:
    """Per-run memoization of identical embed calls."""

    def __init__(self, inner: Embedder):
        self.inner = inner
        self.dimension = inner.dimension
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        with self._lock:
            hit = self._cache.get(text)
        if hit is not None:
            return hit.copy()
        vec = self.inner.embed(text)
        with self._lock:
            self._cache[text] = vec
        return vec.copy()


class FailingEmbedder:
    """Always raises; used to exercise degraded retrieval."""

    def __init__(self, dimension: int):
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        raise ProviderError("embedding backend unavailable")
