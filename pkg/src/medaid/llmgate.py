"""Uniform client for chat-completion endpoints.

Speaks the OpenAI-compatible ``/chat/completions`` wire shape, with retry on
429/5xx, a sliding-window rate limiter, and a deterministic offline mock
backend for tests and demos.  Anything with a ``complete(request)`` method is
a usable backend.
"""

from __future__ import annotations

import os
import random
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import httpx

from .clock import SystemClock
from .errors import CredentialError, ProtocolError, TransportError, ValidationError

ENV_LLM_BASE_URL = "MEDAID_LLM_BASE_URL"
ENV_LLM_API_KEY = "MEDAID_LLM_API_KEY"
ENV_TRANSLATE_BASE_URL = "MEDAID_TRANSLATE_BASE_URL"
ENV_TRANSLATE_API_KEY = "MEDAID_TRANSLATE_API_KEY"

BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_CAP = 30.0


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValidationError(f"invalid message role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValidationError(f"{self.role} message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.7
    max_output_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValidationError("request must contain at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValidationError("temperature must be in [0, 2]")
        object.__setattr__(self, "messages", tuple(self.messages))

    def body(self) -> dict:
        body = {
            "model": self.model,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body


@dataclass(frozen=True)
class BackendConfig:
    base_url: str
    api_key_env: str = ENV_LLM_API_KEY
    requests_per_minute: int = 60
    max_retries: int = 3
    timeout: float = 30.0

    def __post_init__(self):
        if self.requests_per_minute <= 0:
            raise ValidationError("requests_per_minute must be > 0")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")


@dataclass
class CompletionResult:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0


class RateLimiter:
    """Caps issued requests in any sliding 60 s window."""

    def __init__(self, requests_per_minute: int, clock):
        self._rpm = requests_per_minute
        self._clock = clock
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock.monotonic()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self._rpm:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            self._clock.sleep(max(wait, 0.001))


class HttpBackend:
    """Rate-limited, retrying client for one chat-completion endpoint.

    The handle is the unit of rate limiting and is safe to share across
    threads.  429 and 5xx responses (and socket-level failures) are retried
    with exponentially growing jittered delays; 401/403 are surfaced
    immediately as credential errors.
    """

    def __init__(self, config: BackendConfig, *, clock=None, transport=None, rng=None):
        self.config = config
        self._clock = clock or SystemClock()
        self._limiter = RateLimiter(config.requests_per_minute, self._clock)
        self._transport = transport
        self._rng = rng or random.Random()

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise CredentialError(
                f"no API key in ${self.config.api_key_env}; set it or use a mock backend"
            )
        return key

    def _delay(self, attempt: int, previous: float) -> float:
        raw = min(BACKOFF_CAP, BACKOFF_BASE * (BACKOFF_FACTOR**attempt))
        jittered = raw * (0.5 + 0.5 * self._rng.random())
        return max(previous, jittered)  # delays never decrease across retries

    def complete(self, request: ChatRequest) -> CompletionResult:
        key = self._api_key()
        headers = {"Authorization": f"Bearer {key}"}
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last_status: int | None = None
        last_error = "no attempt made"
        delay = 0.0
        started = self._clock.monotonic()
        with httpx.Client(transport=self._transport, timeout=self.config.timeout) as client:
            for attempt in range(self.config.max_retries + 1):
                if attempt > 0:
                    delay = self._delay(attempt - 1, delay)
                    self._clock.sleep(delay)
                self._limiter.acquire()
                try:
                    response = client.post(url, json=request.body(), headers=headers)
                except httpx.HTTPError as exc:
                    last_status, last_error = None, str(exc)
                    continue
                if response.status_code in (401, 403):
                    raise CredentialError(
                        f"endpoint rejected credentials (HTTP {response.status_code})"
                    )
                if response.status_code == 429 or response.status_code >= 500:
                    last_status, last_error = response.status_code, response.text[:200]
                    continue
                if response.status_code != 200:
                    raise TransportError(
                        f"unexpected HTTP {response.status_code}: {response.text[:200]}",
                        status=response.status_code,
                    )
                return self._parse(response, started)
        raise TransportError(
            f"retries exhausted after {self.config.max_retries + 1} attempts: {last_error}",
            status=last_status,
        )

    def _parse(self, response: httpx.Response, started: float) -> CompletionResult:
        try:
            payload = response.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion body: {exc}") from exc
        if not isinstance(text, str):
            raise ProtocolError("completion content is not a string")
        usage = payload.get("usage") or {}
        return CompletionResult(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency=self._clock.monotonic() - started,
        )


def complete(config: BackendConfig, request: ChatRequest, **kwargs) -> CompletionResult:
    """One-shot convenience; reuses a shared handle per config so the rate
    limiter spans calls."""
    backend = _shared_backends.get(config)
    if backend is None or kwargs:
        backend = HttpBackend(config, **kwargs)
        if not kwargs:
            _shared_backends[config] = backend
    return backend.complete(request)


_shared_backends: dict[BackendConfig, HttpBackend] = {}


def last_user_content(request: ChatRequest) -> str:
    for message in reversed(request.messages):
        if message.role == "user":
            return message.content
    return ""


def user_turn_count(request: ChatRequest) -> int:
    return sum(1 for m in request.messages if m.role == "user")


@dataclass
class MockBackend:
    """Deterministic offline backend.

    Three lookup modes, checked in order: a pure ``script`` mapping
    ``key_fn(request)`` to a response; a consumable ``responses`` sequence;
    and a ``fallback`` (constant string or callable on the request).  With
    only a script/fallback the backend is referentially transparent.  Every
    request is recorded on ``transcript``.
    """

    script: dict | None = None
    key_fn: Callable[[ChatRequest], object] = last_user_content
    responses: list[str] | None = None
    fallback: str | Callable[[ChatRequest], str] | None = None
    transcript: list[ChatRequest] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()
        self._queue = deque(self.responses or [])

    def complete(self, request: ChatRequest) -> CompletionResult:
        with self._lock:
            self.transcript.append(request)
            text = self._lookup(request)
        prompt_tokens = sum(len(m.content.split()) for m in request.messages)
        return CompletionResult(
            text=text,
            prompt_tokens=prompt_tokens,
            completion_tokens=len(text.split()),
            latency=0.0,
        )

    def _lookup(self, request: ChatRequest) -> str:
        if self.script is not None:
            key = self.key_fn(request)
            if key in self.script:
                return self.script[key]
        if self._queue:
            return self._queue.popleft()
        if self.fallback is None:
            raise LookupError(f"mock backend has no response for {self.key_fn(request)!r}")
        if callable(self.fallback):
            return self.fallback(request)
        return self.fallback


def identity_backend() -> MockBackend:
    """Mock that echoes the last user message; stands in for a translator."""
    return MockBackend(fallback=last_user_content)
