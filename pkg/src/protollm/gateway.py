"""Prompt execution with retries and an append-only record/replay cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Optional

import httpx
from filelock import FileLock

from .errors import BackendUnavailable, CacheCorrupt, GatewayFrozen
from .prompts import PromptText

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-3.5-turbo-0613"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
VALUE_TEMPERATURE = 0.7
WEIGHT_TEMPERATURE = 0.0

_SEP = "\x1f"


class Backend(str, Enum):
    REMOTE = "remote"
    REPLAY = "replay"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class ChatRequest:
    model: str
    temperature: float
    prompt: PromptText
    query_index: int = 1

    def __post_init__(self):
        if self.query_index < 1:
            raise ValueError("query_index starts at 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    @property
    def key(self) -> str:
        return cache_key(
            self.model, self.temperature, self.prompt.template_version, self.prompt.text, self.query_index
        )


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend: Backend
    token_counts: Optional[tuple] = None


@dataclass(frozen=True)
class CacheEntry:
    key: str
    model: str
    temperature: float
    template_version: str
    prompt: str
    query_index: int
    response: str
    timestamp: str
    token_counts: Optional[list] = None

    def to_line(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True) + "\n"

    @classmethod
    def from_line(cls, line: str) -> "CacheEntry":
        data = json.loads(line)
        entry = cls(**data)
        expected = cache_key(entry.model, entry.temperature, entry.template_version, entry.prompt, entry.query_index)
        if entry.key != expected:
            raise ValueError("stored key does not match entry content")
        return entry


def cache_key(model: str, temperature: float, template_version: str, prompt: str, query_index: int) -> str:
    material = _SEP.join([model, "%.4f" % temperature, template_version, prompt, str(int(query_index))])
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class ReplayCache:
    """JSON-Lines store of :class:`CacheEntry` records.

    Writers serialize through a file lock; existing lines are never rewritten.
    Undecodable lines are logged and collected in :attr:`errors`, and a
    trailing partial line (crash during append) is ignored.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._entries: dict = {}
        self._lock = threading.Lock()
        self._file_lock = FileLock(str(self.path) + ".lock")
        self.errors: list = []
        self.reload()

    def reload(self) -> None:
        entries, errors = {}, []
        if self.path.exists():
            raw = self.path.read_bytes()
            lines = raw.split(b"\n")
            for line_no, line in enumerate(lines, start=1):
                if not line.strip():
                    continue
                partial_tail = line_no == len(lines)  # no terminating newline
                try:
                    entry = CacheEntry.from_line(line.decode("utf-8"))
                except (ValueError, TypeError, UnicodeDecodeError) as exc:
                    if partial_tail:
                        logger.warning("%s: ignoring partial trailing line %d", self.path, line_no)
                        continue
                    err = CacheCorrupt(self.path, line_no, exc)
                    logger.warning("%s", err)
                    errors.append(err)
                    continue
                entries.setdefault(entry.key, entry)
        with self._lock:
            self._entries = entries
            self.errors = errors

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def get(self, key: str) -> Optional[CacheEntry]:
        return self._entries.get(key)

    def append(self, entry: CacheEntry) -> None:
        line = entry.to_line().encode("utf-8")
        with self._lock, self._file_lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "ab+") as fh:
                fh.seek(0, os.SEEK_END)
                if fh.tell() > 0:
                    fh.seek(-1, os.SEEK_END)
                    if fh.read(1) != b"\n":
                        fh.write(b"\n")
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
            self._entries.setdefault(entry.key, entry)

    def digest(self) -> str:
        if not self.path.exists():
            return hashlib.sha256(b"").hexdigest()
        return hashlib.sha256(self.path.read_bytes()).hexdigest()


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    backoff: float = 1.0


class TransientBackendError(Exception):
    """Retryable failure: transport error, 5xx, 429 or a malformed payload."""


class RemoteBackend:
    """Chat-completions style HTTP backend."""

    kind = Backend.REMOTE

    def __init__(self, base_url: str = DEFAULT_BASE_URL, api_key: Optional[str] = None,
                 timeout: float = 60.0, client: Optional[httpx.Client] = None):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.client = client or httpx.Client(timeout=timeout)

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteBackend":
        return cls(
            base_url=os.environ.get("PROTOLLM_BASE_URL", DEFAULT_BASE_URL),
            api_key=os.environ.get("PROTOLLM_API_KEY"),
            **kwargs,
        )

    def send(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": request.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt.text}],
        }
        try:
            resp = self.client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
        except httpx.TransportError as exc:
            raise TransientBackendError(f"transport error: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransientBackendError(f"malformed payload: {exc}") from exc
        if not isinstance(text, str) or not text:
            raise TransientBackendError("empty completion text")
        usage = payload.get("usage") or {}
        counts = None
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            counts = (int(usage["prompt_tokens"]), int(usage["completion_tokens"]))
        return ChatResponse(text, Backend.REMOTE, counts)


class Gateway:
    """Front door for every LLM call: cache lookup, backend call, cache append.

    ``backend=None`` gives a replay-only gateway where a cache miss raises
    :class:`BackendUnavailable`.
    """

    def __init__(self, backend=None, cache: Optional[ReplayCache] = None,
                 policy: RetryPolicy = RetryPolicy(), sleep=time.sleep):
        self.backend = backend
        self.cache = cache
        self.policy = policy
        self._sleep = sleep
        self._lock = threading.Lock()
        self._frozen = False
        self.calls = Counter()  # by prompt kind, including cache hits
        self.backend_calls = 0

    @contextmanager
    def frozen(self):
        """Reject every call inside the block (used around the inference phase)."""
        self._frozen = True
        try:
            yield self
        finally:
            self._frozen = False

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    def complete(self, request: ChatRequest, policy: Optional[RetryPolicy] = None) -> ChatResponse:
        if self._frozen:
            raise GatewayFrozen("LLM call attempted during the inference phase")
        with self._lock:
            self.calls[request.prompt.kind.value] += 1
        key = request.key
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                counts = tuple(hit.token_counts) if hit.token_counts else None
                return ChatResponse(hit.response, Backend.REPLAY, counts)
        if self.backend is None:
            raise BackendUnavailable(f"cache miss for key {key[:12]} and no backend configured")
        response = self._call_with_retries(request, policy or self.policy)
        if self.cache is not None:
            self.cache.append(CacheEntry(
                key=key,
                model=request.model,
                temperature=request.temperature,
                template_version=request.prompt.template_version,
                prompt=request.prompt.text,
                query_index=request.query_index,
                response=response.text,
                timestamp=datetime.now(timezone.utc).isoformat(),
                token_counts=list(response.token_counts) if response.token_counts else None,
            ))
        return response

    def _call_with_retries(self, request: ChatRequest, policy: RetryPolicy) -> ChatResponse:
        last = None
        for attempt in range(policy.max_retries + 1):
            with self._lock:
                self.backend_calls += 1
            try:
                return self.backend.send(request)
            except TransientBackendError as exc:
                last = exc
                logger.warning("backend attempt %d failed: %s", attempt + 1, exc)
                if attempt < policy.max_retries:
                    self._sleep(policy.backoff * 2 ** attempt)
        raise BackendUnavailable(f"gave up after {policy.max_retries + 1} attempts: {last}")
