"""Uniform access to chat and embedding backends.

A BackendSpec is pure configuration; a runtime is the thing that actually
answers (an OpenAI-compatible HTTP endpoint or a deterministic scripted
stand-in). LMClient wraps every runtime with the content-addressed cache,
retry policy, concurrency bound, and call ledger, so HTTP and scripted
backends are observationally interchangeable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import requests

from ..errors import (
    DimensionMismatch,
    MalformedResponse,
    TransportError,
    UnknownInput,
)
from .cache import DiskCache, cache_key
from .ledger import ROLE_RETRIEVER, CallLedger

logger = logging.getLogger(__name__)

CHAT_HTTP = "chat-http"
EMBED_HTTP = "embed-http"
CHAT_SCRIPTED = "chat-scripted"
EMBED_SCRIPTED = "embed-scripted"

KINDS = (CHAT_HTTP, EMBED_HTTP, CHAT_SCRIPTED, EMBED_SCRIPTED)
CHAT_KINDS = (CHAT_HTTP, CHAT_SCRIPTED)
EMBED_KINDS = (EMBED_HTTP, EMBED_SCRIPTED)

RETRY_ATTEMPTS = 3
RETRY_BACKOFF = (1.0, 2.0, 4.0)

DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"


@dataclass(frozen=True)
class BackendParams:
    temperature: float = 0.0
    max_tokens: int = 512
    n: int = 1
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens,
                "n": self.n, "seed": self.seed}


@dataclass(frozen=True)
class BackendSpec:
    """Configuration for one backend. HTTP kinds need an endpoint; scripted
    kinds carry a script reference (a transcript file, or empty when the
    runtime is registered in-process)."""

    id: str
    kind: str
    model_name: str = ""
    endpoint: str = ""
    script: str = ""
    params: BackendParams = field(default_factory=BackendParams)
    api_key_env: str = DEFAULT_API_KEY_ENV

    def __post_init__(self):
        if not self.id:
            raise ValueError("backend id must be non-empty")
        if self.kind not in KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind in (CHAT_HTTP, EMBED_HTTP):
            if not self.endpoint or not self.model_name:
                raise ValueError(f"backend {self.id!r}: http kinds need endpoint and model_name")
            if self.script:
                raise ValueError(f"backend {self.id!r}: http kinds take no script")
        else:
            if self.endpoint:
                raise ValueError(f"backend {self.id!r}: scripted kinds take a script, not an endpoint")

    @property
    def is_chat(self) -> bool:
        return self.kind in CHAT_KINDS

    @property
    def is_embed(self) -> bool:
        return self.kind in EMBED_KINDS


class ChatRuntime(Protocol):
    def complete(self, prompt: str, n: int) -> list[str]: ...


class EmbedRuntime(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class TranscriptChat:
    """Chat runtime scripted by a {prompt digest -> completion(s)} mapping."""

    def __init__(self, transcript: dict[str, str | list[str]]):
        self.transcript = dict(transcript)

    @classmethod
    def from_prompts(cls, pairs: dict[str, str | list[str]]) -> "TranscriptChat":
        return cls({prompt_digest(p): c for p, c in pairs.items()})

    @classmethod
    def from_file(cls, path: str | Path) -> "TranscriptChat":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, prompt: str, n: int) -> list[str]:
        digest = prompt_digest(prompt)
        if digest not in self.transcript:
            raise UnknownInput(f"no transcript entry for prompt digest {digest[:12]}…")
        value = self.transcript[digest]
        if isinstance(value, str):
            return [value] * n
        if len(value) >= n:
            return list(value[:n])
        return list(value) + [value[-1]] * (n - len(value))


class CallableChat:
    """Chat runtime backed by a plain function prompt -> completion(s)."""

    def __init__(self, fn: Callable[[str], str | list[str]]):
        self.fn = fn

    def complete(self, prompt: str, n: int) -> list[str]:
        value = self.fn(prompt)
        if isinstance(value, str):
            return [value] * n
        value = list(value)
        if len(value) >= n:
            return value[:n]
        return value + [value[-1]] * (n - len(value))


class CallableEmbed:
    """Embed runtime backed by a plain function texts -> matrix."""

    def __init__(self, fn: Callable[[Sequence[str]], np.ndarray]):
        self.fn = fn

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return self.fn(texts)


class HttpChat:
    """OpenAI-compatible chat-completions runtime."""

    def __init__(self, spec: BackendSpec, timeout: float = 120.0):
        self.spec = spec
        self.timeout = timeout

    def complete(self, prompt: str, n: int) -> list[str]:
        body = {
            "model": self.spec.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.spec.params.temperature,
            "max_tokens": self.spec.params.max_tokens,
            "n": n,
        }
        if self.spec.params.seed is not None:
            body["seed"] = self.spec.params.seed
        data = _post_json(self.spec, "/chat/completions", body, self.timeout)
        try:
            choices = data["choices"]
            out = [str(c["message"]["content"]) for c in choices]
        except (KeyError, TypeError) as exc:
            raise MalformedResponse(f"backend {self.spec.id!r}: bad chat response shape: {exc}")
        if len(out) != n:
            raise MalformedResponse(
                f"backend {self.spec.id!r}: requested n={n}, got {len(out)} choices")
        return out


class HttpEmbed:
    """OpenAI-compatible embeddings runtime."""

    def __init__(self, spec: BackendSpec, timeout: float = 120.0):
        self.spec = spec
        self.timeout = timeout

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        body = {"model": self.spec.model_name, "input": list(texts)}
        data = _post_json(self.spec, "/embeddings", body, self.timeout)
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            vectors = [r["embedding"] for r in rows]
        except (KeyError, TypeError) as exc:
            raise MalformedResponse(f"backend {self.spec.id!r}: bad embeddings response shape: {exc}")
        if len(vectors) != len(texts):
            raise MalformedResponse(
                f"backend {self.spec.id!r}: sent {len(texts)} inputs, got {len(vectors)} embeddings")
        return vectors


def _post_json(spec: BackendSpec, path: str, body: dict, timeout: float) -> dict:
    url = spec.endpoint.rstrip("/") + path
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(spec.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    try:
        resp = requests.post(url, json=body, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"backend {spec.id!r}: {exc}") from exc
    if resp.status_code == 429 or resp.status_code >= 500:
        raise TransportError(f"backend {spec.id!r}: HTTP {resp.status_code}")
    if resp.status_code != 200:
        raise MalformedResponse(
            f"backend {spec.id!r}: HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()
    except ValueError as exc:
        raise MalformedResponse(f"backend {spec.id!r}: response is not JSON") from exc


def build_runtime(spec: BackendSpec):
    """Construct the runtime a spec describes (file-scripted or HTTP)."""
    if spec.kind == CHAT_HTTP:
        return HttpChat(spec)
    if spec.kind == EMBED_HTTP:
        return HttpEmbed(spec)
    if not spec.script:
        raise ValueError(
            f"backend {spec.id!r} is scripted with no script file; register its runtime explicitly")
    if spec.kind == CHAT_SCRIPTED:
        return TranscriptChat.from_file(spec.script)
    raise ValueError(f"backend {spec.id!r}: no file-based runtime for kind {spec.kind!r}")


class LMClient:
    """Cache-first access to all backends, with ledger accounting.

    Identical logical requests are served from the cache and coalesced across
    threads (per-key locks), so upstream_calls equals the number of distinct
    cache keys that reached each backend. At most `max_concurrency` upstream
    requests are in flight engine-wide.
    """

    def __init__(self, cache: DiskCache, ledger: CallLedger, *,
                 max_concurrency: int = 4,
                 retry_attempts: int = RETRY_ATTEMPTS,
                 retry_backoff: Sequence[float] = RETRY_BACKOFF,
                 sleep: Callable[[float], None] = time.sleep):
        self.cache = cache
        self.ledger = ledger
        self.retry_attempts = retry_attempts
        self.retry_backoff = tuple(retry_backoff)
        self._sleep = sleep
        self._runtimes: dict[str, object] = {}
        self._semaphore = threading.Semaphore(max_concurrency)
        self._key_locks: dict[str, threading.Lock] = {}
        self._embed_locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def register(self, backend_id: str, runtime) -> None:
        """Attach an in-process runtime (scripted mocks) to a backend id."""
        self._runtimes[backend_id] = runtime

    def _runtime(self, spec: BackendSpec):
        if spec.id not in self._runtimes:
            self._runtimes[spec.id] = build_runtime(spec)
        return self._runtimes[spec.id]

    def _lock_for(self, table: dict[str, threading.Lock], key: str) -> threading.Lock:
        with self._registry_lock:
            return table.setdefault(key, threading.Lock())

    def _call_upstream(self, spec: BackendSpec, fn):
        last: Exception | None = None
        for attempt in range(self.retry_attempts):
            try:
                with self._semaphore:
                    return fn()
            except TransportError as exc:
                last = exc
                if attempt + 1 < self.retry_attempts:
                    delay = self.retry_backoff[min(attempt, len(self.retry_backoff) - 1)]
                    logger.warning("backend %s attempt %d/%d failed (%s); retrying in %.1fs",
                                   spec.id, attempt + 1, self.retry_attempts, exc, delay)
                    self._sleep(delay)
        raise last  # type: ignore[misc]

    def complete(self, spec: BackendSpec, role: str, prompt: str) -> list[str]:
        """Return exactly params.n completions for the prompt, cache-first."""
        if not spec.is_chat:
            raise ValueError(f"backend {spec.id!r} is not a chat backend")
        n = spec.params.n
        key = cache_key("chat", spec.id, spec.model_name, spec.params.to_dict(), prompt)
        with self._lock_for(self._key_locks, key):
            hit = self.cache.get(key)
            if hit is not None:
                self.ledger.record_cache_hit(spec.id, role)
                return list(hit)
            runtime = self._runtime(spec)
            completions = self._call_upstream(spec, lambda: runtime.complete(prompt, n))
            completions = [str(c) for c in completions]
            if len(completions) != n:
                raise MalformedResponse(
                    f"backend {spec.id!r}: expected {n} completions, got {len(completions)}")
            self.cache.put(key, completions)
            self.ledger.record_upstream(spec.id, role)
            return completions

    def embed(self, spec: BackendSpec, texts: Sequence[str], role: str = ROLE_RETRIEVER) -> np.ndarray:
        """Embed texts, L2-normalized, order preserved; cached per text.

        One upstream request covers all uncached texts of a batch, so
        upstream_calls counts batch requests while cache_hits counts texts.
        """
        if not spec.is_embed:
            raise ValueError(f"backend {spec.id!r} is not an embedding backend")
        if not texts:
            raise ValueError("embed() requires a non-empty batch")
        keys = [cache_key("embed", spec.id, spec.model_name, {}, t) for t in texts]
        vectors: list[np.ndarray | None] = [None] * len(texts)

        hits = 0
        for i, key in enumerate(keys):
            cached = self.cache.get(key)
            if cached is not None:
                vectors[i] = np.asarray(cached, dtype=np.float64)
                hits += 1
        missing = [i for i, v in enumerate(vectors) if v is None]

        if missing:
            # per-backend lock so racing batches cannot double-count upstream
            with self._lock_for(self._embed_locks, spec.id):
                still = []
                for i in missing:
                    cached = self.cache.get(keys[i])
                    if cached is not None:
                        vectors[i] = np.asarray(cached, dtype=np.float64)
                        hits += 1
                    else:
                        still.append(i)
                if still:
                    unique: dict[str, list[int]] = {}
                    for i in still:
                        unique.setdefault(texts[i], []).append(i)
                    batch = list(unique)
                    runtime = self._runtime(spec)
                    raw = self._call_upstream(spec, lambda: runtime.embed(batch))
                    try:
                        raw = np.asarray(raw, dtype=np.float64)
                    except ValueError as exc:
                        raise DimensionMismatch(
                            f"backend {spec.id!r}: inconsistent dimensions within batch") from exc
                    if raw.ndim != 2 or raw.shape[0] != len(batch):
                        raise MalformedResponse(
                            f"backend {spec.id!r}: expected {len(batch)} vectors, got shape {raw.shape}")
                    normalized = _normalize_rows(spec, raw)
                    for text, vec in zip(batch, normalized):
                        for i in unique[text]:
                            vectors[i] = vec
                        self.cache.put(cache_key("embed", spec.id, spec.model_name, {}, text),
                                       vec.tolist())
                    self.ledger.record_upstream(spec.id, role)
        if hits:
            self.ledger.record_cache_hit(spec.id, role, hits)

        dims = {v.shape[0] for v in vectors}  # type: ignore[union-attr]
        if len(dims) != 1:
            raise DimensionMismatch(f"backend {spec.id!r}: mixed dimensions {sorted(dims)} in batch")
        return np.stack(vectors)  # type: ignore[arg-type]


def _normalize_rows(spec: BackendSpec, matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms < 1e-12):
        raise MalformedResponse(f"backend {spec.id!r} returned a zero-norm embedding")
    return matrix / norms[:, None]
