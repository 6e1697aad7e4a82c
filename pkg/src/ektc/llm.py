"""Chat-completion client with retries, plus a scriptable mock."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

CHAT_ROLES = ("system", "user", "assistant")


class LLMError(Exception):
    pass


class TransportError(LLMError):
    pass


class BadRequest(LLMError):
    pass


class BudgetExceeded(LLMError):
    pass


@dataclass(frozen=True)
class ChatParams:
    temperature: float = 0.0
    max_tokens: int = 512
    stop: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    params: ChatParams = ChatParams()
    endpoint: str = "default"

    def __post_init__(self) -> None:
        msgs = tuple((r, c) for r, c in self.messages)
        if not msgs:
            raise ValueError("messages must be non-empty")
        for role, _ in msgs:
            if role not in CHAT_ROLES:
                raise ValueError(f"role {role!r} not allowed in a chat request")
        object.__setattr__(self, "messages", msgs)

    @classmethod
    def of(cls, prompt: str, *, system: str | None = None, params: ChatParams = ChatParams(),
           endpoint: str = "default") -> "ChatRequest":
        msgs = ((("system", system),) if system else ()) + (("user", prompt),)
        return cls(msgs, params, endpoint)

    def text(self) -> str:
        return "\n".join(c for _, c in self.messages)

    def to_wire(self, model: str) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.params.temperature,
            "max_tokens": self.params.max_tokens,
        }
        if self.params.stop:
            body["stop"] = list(self.params.stop)
        return body


class ChatModel(Protocol):
    def complete(self, req: ChatRequest) -> str: ...


@dataclass
class EndpointProfile:
    name: str = "default"
    url: str = ""
    model: str = ""
    key: str | None = None
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 1.0
    max_requests: int | None = None
    max_total_tokens: int | None = None
    requests_per_second: float | None = None

    def with_env(self) -> "EndpointProfile":
        url = os.environ.get("EKTC_LLM_URL") or self.url
        key = os.environ.get("EKTC_LLM_KEY") or self.key
        return EndpointProfile(**{**self.__dict__, "url": url, "key": key})


_global_slots = threading.BoundedSemaphore(16)


def set_max_in_flight(n: int) -> None:
    """Cap concurrent HTTP requests across every ChatClient in the process."""
    global _global_slots
    _global_slots = threading.BoundedSemaphore(n)


class ChatClient:
    """OpenAI-compatible chat client.

    Retries transport errors, 429 and 5xx with exponential backoff; other 4xx
    responses are BadRequest and never retried.
    """

    def __init__(self, profile: EndpointProfile, *, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        if not profile.url:
            raise BadRequest(f"endpoint {profile.name!r} has no url")
        self.profile = profile
        self.attempts = 0
        self._http = client or httpx.Client(timeout=profile.timeout)
        self._sleep = sleep
        self._lock = threading.Lock()
        self._requests = 0
        self._tokens = 0
        self._next_start = 0.0

    def _reserve(self) -> None:
        p = self.profile
        with self._lock:
            if p.max_requests is not None and self._requests >= p.max_requests:
                raise BudgetExceeded(f"{p.name}: request quota {p.max_requests} used up")
            if p.max_total_tokens is not None and self._tokens >= p.max_total_tokens:
                raise BudgetExceeded(f"{p.name}: token quota {p.max_total_tokens} used up")
            self._requests += 1
            wait = 0.0
            if p.requests_per_second:
                now = time.monotonic()
                start = max(now, self._next_start)
                self._next_start = start + 1.0 / p.requests_per_second
                wait = start - now
        if wait > 0:
            self._sleep(wait)

    def complete(self, req: ChatRequest) -> str:
        self._reserve()
        p = self.profile
        headers = {"Authorization": f"Bearer {p.key}"} if p.key else {}
        url = p.url.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        last = ""
        for attempt in range(p.max_retries + 1):
            if attempt:
                self._sleep(p.backoff * 2 ** (attempt - 1))
            with self._lock:
                self.attempts += 1
            try:
                with _global_slots:
                    resp = self._http.post(url, json=req.to_wire(p.model), headers=headers)
            except httpx.TransportError as exc:
                last = repr(exc)
                logger.warning("%s attempt %d failed: %s", p.name, attempt + 1, last)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                logger.warning("%s attempt %d failed: %s", p.name, attempt + 1, last)
                continue
            if resp.status_code >= 400:
                raise BadRequest(f"HTTP {resp.status_code}: {resp.text[:300]}")
            try:
                data = resp.json()
                text = data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BadRequest(f"unexpected reply shape: {exc}") from None
            usage = data.get("usage") or {}
            with self._lock:
                self._tokens += int(usage.get("total_tokens", 0))
            return text or ""
        raise TransportError(f"{p.name}: gave up after {p.max_retries + 1} attempts ({last})")


@dataclass(frozen=True)
class Rule:
    """Reply with ``reply`` when every ``contains`` substring is in the request
    text, and (if set) the request is the ``position``-th one (0-based)."""

    reply: str
    contains: tuple[str, ...] = ()
    position: int | None = None

    def __post_init__(self) -> None:
        if isinstance(self.contains, str):
            object.__setattr__(self, "contains", (self.contains,))

    def matches(self, text: str, index: int) -> bool:
        if self.position is not None and self.position != index:
            return False
        return all(s in text for s in self.contains)


@dataclass
class MockLLM:
    """Scripted chat model. First matching rule wins.

    Unmatched requests raise BadRequest in strict mode, otherwise get
    ``default``. Every request is recorded verbatim in ``requests``.
    """

    rules: list[Rule] = field(default_factory=list)
    strict: bool = True
    default: str = ""
    requests: list[ChatRequest] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    @classmethod
    def sequence(cls, replies: Sequence[str], **kw: Any) -> "MockLLM":
        return cls([Rule(r, position=i) for i, r in enumerate(replies)], **kw)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "MockLLM":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, list):
            data = {"rules": data}
        rules = [Rule(r["reply"], tuple(r.get("contains", ())) if not isinstance(r.get("contains"), str)
                      else (r["contains"],), r.get("position")) for r in data.get("rules", [])]
        return cls(rules, strict=data.get("strict", True), default=data.get("default", ""))

    def complete(self, req: ChatRequest) -> str:
        with self._lock:
            index = len(self.requests)
            self.requests.append(req)
        text = req.text()
        for rule in self.rules:
            if rule.matches(text, index):
                return rule.reply
        if self.strict:
            raise BadRequest(f"mock: no rule matches request #{index}")
        return self.default


def ask(model: ChatModel, prompt: str, *, system: str | None = None, temperature: float = 0.0,
        max_tokens: int = 512, stop: Sequence[str] | None = None, endpoint: str = "default") -> str:
    params = ChatParams(temperature, max_tokens, tuple(stop) if stop else None)
    return model.complete(ChatRequest.of(prompt, system=system, params=params, endpoint=endpoint))
