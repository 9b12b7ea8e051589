"""Clients for the external model and knowledge services: chat completion
(vision-capable), embeddings, search-based tag expansion, and ConceptNet
relatedness.

Every call goes through a content-addressed on-disk cache keyed by the
canonical request, so a frozen cache makes whole pipeline runs deterministic
and offline-replayable. The wire protocol is OpenAI-compatible; stub
transports below serve tests and offline demos.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np

log = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-6
EXPANSION_MAX_CHARS = 500


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    """Network-level failure; retryable."""


class HTTPStatusError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:500]}")
        self.status = status
        self.body = body


class GatewayConfigError(GatewayError):
    """Fatal misconfiguration, e.g. embedding dimension drift within a run."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str
    images: tuple[str, ...] = ()  # file paths, encoded at send time


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.001
    max_new_tokens: int = 30

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        system_positions = [i for i, m in enumerate(self.messages) if m.role == "system"]
        if len(system_positions) > 1 or (system_positions and system_positions[0] != 0):
            raise ValueError("at most one system message, and it must come first")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dim: int
    normalized: bool

    def __post_init__(self) -> None:
        if len(self.values) != self.dim:
            raise ValueError(f"vector length {len(self.values)} != dim {self.dim}")
        if self.normalized:
            norm = float(np.linalg.norm(self.values))
            if abs(norm - 1.0) > NORMALIZATION_TOL:
                raise ValueError(f"normalized vector has norm {norm}")

    def __array__(self, dtype=None):
        return np.asarray(self.values, dtype=dtype or float)


@dataclass(frozen=True)
class CacheKey:
    kind: str
    digest: str


def canonical_digest(kind: str, payload: dict) -> CacheKey:
    blob = json.dumps({"kind": kind, "payload": payload}, sort_keys=True, ensure_ascii=False)
    return CacheKey(kind=kind, digest=hashlib.sha256(blob.encode("utf-8")).hexdigest())


class ResponseCache:
    """One file per key under ``root/<kind>/<digest>.json``; the request is
    stored beside the response for auditability. Writes are serialized per
    key, and the per-key lock doubles as the in-flight coalescing point."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_mutex = threading.Lock()

    def _path(self, key: CacheKey) -> Path:
        return self.root / key.kind / f"{key.digest}.json"

    def lock(self, key: CacheKey) -> threading.Lock:
        with self._locks_mutex:
            return self._locks.setdefault(key.digest, threading.Lock())

    def get(self, key: CacheKey) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["response"]

    def put(self, key: CacheKey, request: dict, response: dict) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {"kind": key.kind, "digest": key.digest, "request": request, "response": response}
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(entry, sort_keys=True, ensure_ascii=False), encoding="utf-8")
        tmp.replace(path)


@dataclass
class GatewayConfig:
    """Endpoint and behavior settings. API keys are named by environment
    variable only and never stored in config files."""

    cache_dir: str | Path = ".memeguard-cache"
    chat_url: str = ""
    embed_url: str = ""
    search_url: str = ""
    conceptnet_url: str = ""
    chat_model: str = "gpt-4o"
    embed_model: str = "clip"
    summary_model: str = "summary-ft"
    tag_model: str = "tags-ft"
    api_key_env: str = "MEMEGUARD_API_KEY"
    timeout: float = 60.0
    parallelism: int = 8
    max_attempts: int = 5
    backoff_base: float = 0.5

    @classmethod
    def from_file(cls, path: str | Path) -> "GatewayConfig":
        """Parse the flat ``KEY = value`` config format (# comments allowed)."""
        values: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise GatewayConfigError(f"{path}:{lineno}: expected KEY = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        kwargs: dict = {}
        for f in (
            "cache_dir", "chat_url", "embed_url", "search_url", "conceptnet_url",
            "chat_model", "embed_model", "summary_model", "tag_model", "api_key_env",
        ):
            if f in values:
                kwargs[f] = values.pop(f)
        for f, cast in (("timeout", float), ("parallelism", int), ("max_attempts", int), ("backoff_base", float)):
            if f in values:
                kwargs[f] = cast(values.pop(f))
        if values:
            raise GatewayConfigError(f"unknown config keys: {sorted(values)}")
        return cls(**kwargs)


class Transport(Protocol):
    def send(self, kind: str, payload: dict) -> dict: ...


class HttpTransport:
    """OpenAI-compatible HTTP transport. ``kind`` selects the endpoint."""

    def __init__(self, config: GatewayConfig):
        import os

        self.config = config
        headers = {}
        api_key = os.environ.get(config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=config.timeout, headers=headers)

    def send(self, kind: str, payload: dict) -> dict:
        url = {
            "chat": self.config.chat_url,
            "embed": self.config.embed_url,
            "search": self.config.search_url,
            "conceptnet": self.config.conceptnet_url,
        }.get(kind, "")
        if not url:
            raise GatewayConfigError(f"no endpoint configured for {kind!r}")
        try:
            if kind in ("search", "conceptnet"):
                resp = self._client.get(url, params=payload)
            else:
                resp = self._client.post(url, json=payload)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 400:
            raise HTTPStatusError(resp.status_code, resp.text)
        return resp.json()


def hash_unit_vector(content: str, dim: int = 32) -> list[float]:
    """Deterministic pseudo-random unit vector derived from content bytes."""
    seed = int.from_bytes(hashlib.sha256(content.encode("utf-8")).digest()[:8], "big")
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim)
    return list(v / np.linalg.norm(v))


class StubTransport:
    """Programmable in-memory endpoint for tests and offline demos.

    ``chat`` may be a fixed string or a callable over the wire payload.
    Embeddings come from an explicit table (values keyed by input string) or,
    absent that, deterministic hash-derived unit vectors.
    """

    def __init__(
        self,
        chat: str | Callable[[dict], str] = "ok",
        embed_table: dict[str, Sequence[float]] | None = None,
        embed_dim: int = 32,
        search: dict[str, str] | None = None,
        conceptnet: dict[tuple[str, str], float] | None = None,
        fail_times: int = 0,
    ):
        self.chat = chat
        self.embed_table = embed_table
        self.embed_dim = embed_dim
        self.search = search or {}
        self.conceptnet = conceptnet or {}
        self.fail_times = fail_times
        self.calls: dict[str, int] = {"chat": 0, "embed": 0, "search": 0, "conceptnet": 0}

    def send(self, kind: str, payload: dict) -> dict:
        self.calls[kind] = self.calls.get(kind, 0) + 1
        if self.fail_times > 0:
            self.fail_times -= 1
            raise TransportError("stub transport failure")
        if kind == "chat":
            text = self.chat(payload) if callable(self.chat) else self.chat
            return {"choices": [{"message": {"content": text}}]}
        if kind == "embed":
            text = payload["input"][0]
            if self.embed_table is not None:
                if text not in self.embed_table:
                    raise HTTPStatusError(400, f"stub has no embedding for {text!r}")
                vec = list(self.embed_table[text])
            else:
                vec = hash_unit_vector(text, self.embed_dim)
            return {"data": [{"embedding": vec}]}
        if kind == "search":
            snippet = self.search.get(payload["q"], "")
            return {"snippets": [snippet] if snippet else []}
        if kind == "conceptnet":
            a = payload["node1"].rsplit("/", 1)[-1]
            b = payload["node2"].rsplit("/", 1)[-1]
            if a == b:
                return {"value": 1.0}
            value = self.conceptnet.get((a, b), self.conceptnet.get((b, a)))
            if value is None:
                raise HTTPStatusError(404, "term not found")
            return {"value": value}
        raise GatewayConfigError(f"stub: unknown kind {kind!r}")


def _encode_image(path: str | Path) -> str:
    data = Path(path).read_bytes()
    return "data:image/png;base64," + base64.b64encode(data).decode("ascii")


class ModelGateway:
    """Uniform access to all external services, with caching and retries.

    Passing ``transport=None`` puts the gateway in cache-only mode: any miss
    raises, which is exactly what frozen-cache replay runs want.
    """

    def __init__(
        self,
        config: GatewayConfig,
        transport: Transport | None = None,
        cache: ResponseCache | None = None,
    ):
        self.config = config
        self.transport = transport
        self.cache = cache if cache is not None else ResponseCache(config.cache_dir)
        self.warnings: list[str] = []
        self._embed_dim: int | None = None
        self._dim_lock = threading.Lock()
        self._tls = threading.local()

    @property
    def last_latency(self) -> float:
        """Wall time of the last live network call on this thread; 0.0 when
        the answer came from cache (keeps replay runs byte-deterministic)."""
        return getattr(self._tls, "latency", 0.0)

    @last_latency.setter
    def last_latency(self, value: float) -> None:
        self._tls.latency = value

    # ------------------------------------------------------------ plumbing

    def _warn(self, message: str) -> None:
        self.warnings.append(message)
        log.warning(message)

    def _call(self, kind: str, payload: dict, retry_on_429: bool = False) -> dict:
        """Cache-through call with retries. Returns the response object."""
        key = canonical_digest(kind, payload)
        with self.cache.lock(key):
            cached = self.cache.get(key)
            if cached is not None:
                self.last_latency = 0.0
                return cached
            if self.transport is None:
                raise GatewayError(f"cache miss for {kind} request and no transport configured")
            response = self._send_with_retries(kind, payload, retry_on_429)
            self.cache.put(key, payload, response)
            return response

    def _send_with_retries(self, kind: str, payload: dict, retry_on_429: bool) -> dict:
        last: Exception | None = None
        for attempt in range(self.config.max_attempts):
            if attempt:
                time.sleep(self.config.backoff_base * 2 ** (attempt - 1))
            started = time.perf_counter()
            try:
                response = self.transport.send(kind, payload)
                self.last_latency = time.perf_counter() - started
                return response
            except TransportError as exc:
                last = exc
                log.warning("%s attempt %d failed: %s", kind, attempt + 1, exc)
            except HTTPStatusError as exc:
                if exc.status == 429 and retry_on_429:
                    last = exc
                    log.warning("%s rate-limited, backing off", kind)
                    continue
                raise
        raise TransportError(f"{kind} failed after {self.config.max_attempts} attempts: {last}")

    # ------------------------------------------------------------ chat

    def chat_complete(self, req: ChatRequest) -> str:
        """First completion text for an OpenAI-style chat request."""
        messages = []
        for msg in req.messages:
            if msg.images:
                content: list[dict] = [{"type": "text", "text": msg.text}]
                for image in msg.images:
                    content.append({"type": "image_url", "image_url": {"url": _encode_image(image)}})
                messages.append({"role": msg.role, "content": content})
            else:
                messages.append({"role": msg.role, "content": msg.text})
        payload = {
            "model": req.model_id,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_new_tokens,
        }
        response = self._call("chat", payload)
        try:
            text = response["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat response: {response!r}") from exc
        if not text:
            raise GatewayError("empty completion")
        return text

    # ------------------------------------------------------------ embeddings

    def _embed(self, content: str) -> EmbeddingVector:
        payload = {"model": self.config.embed_model, "input": [content]}
        response = self._call("embed", payload)
        try:
            raw = response["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed embedding response: {response!r}") from exc
        vec = np.asarray(raw, dtype=float)
        with self._dim_lock:
            if self._embed_dim is None:
                self._embed_dim = vec.size
            elif vec.size != self._embed_dim:
                raise GatewayConfigError(
                    f"embedding dimension drift: got {vec.size}, expected {self._embed_dim}"
                )
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise GatewayError("embedding endpoint returned a zero vector")
        unit = vec / norm
        return EmbeddingVector(values=tuple(float(x) for x in unit), dim=vec.size, normalized=True)

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("embed_text needs non-empty input")
        return self._embed(text)

    def embed_image(self, image: str | Path) -> EmbeddingVector:
        return self._embed(_encode_image(image))

    # ------------------------------------------------------------ expansion

    def expand_tag(self, tag: str) -> str:
        """Short search-derived expansion, cached permanently per tag.

        A dead search service degrades to an empty expansion with a warning;
        the pipeline never halts here.
        """
        if not tag:
            raise ValueError("expand_tag needs a non-empty tag")
        payload = {"q": tag}
        try:
            response = self._call("search", payload)
        except GatewayError as exc:
            self._warn(f"tag expansion unavailable for {tag!r}: {exc}")
            return ""
        snippets = response.get("snippets", [])
        text = " ".join(s for s in snippets if s).strip()[:EXPANSION_MAX_CHARS]
        if not text:
            self._warn(f"empty search expansion for {tag!r}")
        return text

    # ------------------------------------------------------------ conceptnet

    @staticmethod
    def _slug(term: str) -> str:
        return "_".join(term.lower().split())

    def conceptnet_relatedness(self, a: str, b: str) -> float:
        if not a or not b:
            raise ValueError("conceptnet_relatedness needs non-empty terms")
        slugs = sorted((self._slug(a), self._slug(b)))  # symmetric cache key
        payload = {"node1": f"/c/en/{slugs[0]}", "node2": f"/c/en/{slugs[1]}"}
        try:
            response = self._call("conceptnet", payload, retry_on_429=True)
        except HTTPStatusError as exc:
            if exc.status == 404:
                self._warn(f"conceptnet: unknown term pair ({a!r}, {b!r}); relatedness 0")
                return 0.0
            raise
        return float(response.get("value", 0.0))


def parallel_map(fn: Callable, items: Sequence, max_workers: int) -> list:
    """Apply fn across items on a bounded pool, results in input order."""
    from concurrent.futures import ThreadPoolExecutor

    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))
