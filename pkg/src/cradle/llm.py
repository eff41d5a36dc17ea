"""Chat-completion gateway with live and scripted backends.

The live backend speaks the common chat-completions wire protocol (POST
<base>/chat/completions). The scripted backend replays canned replies for
deterministic tests. Both sit behind the same one-method interface, and a
Gateway adds model routing (reasoning vs completion labels) plus usage
accounting.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass, field

import requests

from .model import CradleError

API_KEY_ENV = "CRADLE_API_KEY"
API_BASE_ENV = "CRADLE_API_BASE"
DEFAULT_API_BASE = "https://api.openai.com/v1"

ROLES = ("system", "user", "assistant")

DEFAULT_MODEL_ROUTING = {"reasoning": "o4-mini", "completion": "gpt-4.1"}
# model families that reject an explicit temperature parameter
TEMPERATURE_DENYLIST = ("o1", "o3", "o4")


class GatewayError(CradleError):
    """Base for LLM transport failures."""


class AuthError(GatewayError):
    """Credential rejected or absent; never retried."""


class RateLimited(GatewayError):
    """Still throttled after all retry attempts."""


class ScriptExhausted(GatewayError):
    """Scripted backend has no reply left that matches the request."""


class MalformedResponse(GatewayError):
    """Response body did not contain an assistant message."""


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple  # ordered (role, text) pairs
    temperature: float | None = 0.2
    max_tokens: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple((r, t) for r, t in self.messages))
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        if self.messages[0][0] not in ("system", "user"):
            raise ValueError("first message role must be system or user")
        if self.temperature is not None and not (0.0 <= self.temperature <= 2.0):
            raise ValueError("temperature must be within [0, 2]")
        if self.max_tokens is not None and self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def last_user_text(self) -> str:
        for role, text in reversed(self.messages):
            if role == "user":
                return text
        return ""


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    model_echo: str = ""
    latency_ms: int = 0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0 or self.latency_ms < 0:
            raise ValueError("usage counters must be >= 0")


def complete(request: ChatRequest, backend) -> ChatResponse:
    """One chat completion through the given backend."""
    return backend.send(request)


class ScriptedBackend:
    """Replays scripted replies in order.

    Each entry is {"match": "<substring or *>", "reply": "..."}. A request
    consumes the first unconsumed entry whose match is "*" or a substring of
    the request's last user message.
    """

    def __init__(self, entries):
        self._entries = [dict(e) for e in entries]
        for e in self._entries:
            if "match" not in e or "reply" not in e:
                raise ValueError("script entries need match and reply fields")
        self._consumed = [False] * len(self._entries)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        entries = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        return cls(entries)

    @property
    def remaining(self) -> int:
        with self._lock:
            return self._consumed.count(False)

    def send(self, request: ChatRequest) -> ChatResponse:
        target = request.last_user_text()
        with self._lock:
            for i, entry in enumerate(self._entries):
                if self._consumed[i]:
                    continue
                if entry["match"] == "*" or entry["match"] in target:
                    self._consumed[i] = True
                    return ChatResponse(
                        text=entry["reply"], model_echo=request.model, latency_ms=0
                    )
        raise ScriptExhausted(
            f"no unconsumed scripted reply matches ({self._consumed.count(False)} left "
            f"of {len(self._entries)})"
        )


class LiveBackend:
    """HTTP chat-completions client with bounded retries.

    Retries 429/5xx/timeouts with exponential backoff and jitter, up to
    max_attempts total tries. 401/403 raise AuthError immediately.
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        timeout_s: float = 120.0,
        max_attempts: int = 3,
        backoff_base_s: float = 0.5,
    ):
        self.base_url = (base_url or os.environ.get(API_BASE_ENV) or DEFAULT_API_BASE).rstrip("/")
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout_s = timeout_s
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s

    def __repr__(self):
        masked = "***" if self._api_key else "unset"
        return f"LiveBackend(base_url={self.base_url!r}, api_key={masked})"

    def _body(self, request: ChatRequest) -> dict:
        body = {
            "model": request.model,
            "messages": [{"role": r, "content": t} for r, t in request.messages],
        }
        if request.temperature is not None:
            body["temperature"] = request.temperature
        if request.max_tokens is not None:
            body["max_tokens"] = request.max_tokens
        return body

    def send(self, request: ChatRequest) -> ChatResponse:
        if not self._api_key:
            raise AuthError(f"no credential; set {API_KEY_ENV}")
        url = f"{self.base_url}/chat/completions"
        headers = {"Authorization": f"Bearer {self._api_key}"}
        body = self._body(request)
        last_failure = "no attempt made"
        rate_limited = False
        for attempt in range(self.max_attempts):
            if attempt:
                delay = self.backoff_base_s * (2 ** (attempt - 1))
                time.sleep(delay + random.uniform(0, delay / 2))
            start = time.monotonic()
            try:
                resp = requests.post(url, json=body, headers=headers, timeout=self.timeout_s)
            except (requests.Timeout, requests.ConnectionError) as e:
                last_failure = f"transport: {e.__class__.__name__}"
                continue
            latency_ms = int((time.monotonic() - start) * 1000)
            if resp.status_code in (401, 403):
                raise AuthError(f"credential rejected (HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                rate_limited = resp.status_code == 429
                last_failure = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp, request, latency_ms)
        if rate_limited:
            raise RateLimited(f"gave up after {self.max_attempts} attempts ({last_failure})")
        raise GatewayError(f"gave up after {self.max_attempts} attempts ({last_failure})")

    @staticmethod
    def _parse(resp, request: ChatRequest, latency_ms: int) -> ChatResponse:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise MalformedResponse(f"cannot extract assistant text: {e}") from e
        if not isinstance(text, str):
            raise MalformedResponse("assistant content is not text")
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            prompt_tokens=max(0, int(usage.get("prompt_tokens", 0) or 0)),
            completion_tokens=max(0, int(usage.get("completion_tokens", 0) or 0)),
            model_echo=str(data.get("model", request.model)),
            latency_ms=latency_ms,
        )


@dataclass
class UsageTally:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def to_dict(self) -> dict:
        return {
            "calls": self.calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


class Gateway:
    """Routes labeled requests to configured models and tallies usage.

    Labels: "reasoning" for planning, "completion" for rewriting. Models on
    the temperature deny-list get their temperature omitted rather than sent.
    """

    def __init__(self, backend, routing: dict | None = None,
                 temperature: float = 0.2,
                 temperature_denylist=TEMPERATURE_DENYLIST):
        self.backend = backend
        self.routing = dict(DEFAULT_MODEL_ROUTING)
        if routing:
            self.routing.update(routing)
        self.temperature = temperature
        self.temperature_denylist = tuple(temperature_denylist)
        self.usage = UsageTally()
        self._lock = threading.Lock()

    def model_for(self, label: str) -> str:
        try:
            return self.routing[label]
        except KeyError:
            raise ValueError(f"unknown request label {label!r}") from None

    def _temperature_for(self, model: str) -> float | None:
        if any(model.startswith(prefix) for prefix in self.temperature_denylist):
            return None
        return self.temperature

    def complete(self, label: str, messages, max_tokens: int | None = None) -> ChatResponse:
        model = self.model_for(label)
        request = ChatRequest(
            model=model,
            messages=tuple(messages),
            temperature=self._temperature_for(model),
            max_tokens=max_tokens,
        )
        response = complete(request, self.backend)
        with self._lock:
            self.usage.calls += 1
            self.usage.prompt_tokens += response.prompt_tokens
            self.usage.completion_tokens += response.completion_tokens
        return response


@dataclass(frozen=True)
class CodeBlock:
    text: str
    info: str = ""
    terminated: bool = True

    def __str__(self):
        return self.text


def extract_code_blocks(text: str, tag: str | None = None) -> list[CodeBlock]:
    """Fenced code blocks from assistant text, in order.

    Line-based: a fence opens on a line starting with ``` plus an optional
    info string, and closes on a bare ``` line. Nesting is not interpreted.
    With a tag, only blocks whose info string equals the tag are returned.
    An unterminated final fence still yields a block, flagged terminated=False.
    """
    blocks: list[CodeBlock] = []
    current: list[str] | None = None
    info = ""
    for line in text.splitlines():
        stripped = line.strip()
        if current is None:
            if stripped.startswith("```"):
                info = stripped[3:].strip()
                current = []
        else:
            if stripped == "```":
                blocks.append(CodeBlock("\n".join(current), info, True))
                current = None
            else:
                current.append(line)
    if current is not None:
        blocks.append(CodeBlock("\n".join(current), info, False))
    if tag is not None:
        blocks = [b for b in blocks if b.info == tag]
    return blocks
