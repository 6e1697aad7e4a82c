"""Knowledge-base tools: relation sets, backends, registry and observation assembly."""
from __future__ import annotations

import hashlib
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

TOOL_NAME = "EmotionKnowledgebase"

COMET_RELATIONS = ("xContent", "xNeed", "xWant", "xEffect", "xReact")
CICERO_RELATIONS = ("Cause", "SubEv", "Motiv", "React")

TOOL_DESCRIPTION = (
    "A commonsense knowledge base about people's mental states and events. "
    "Given an utterance from the conversation, it infers the speaker's likely "
    "intent, needs, wants, the effect of the event on them and their emotional "
    "reaction. Input: {\"prompt\": <utterance>}."
)
CICERO_DESCRIPTION = (
    "A commonsense knowledge base for dialogue reasoning. Given an utterance, it "
    "infers the cause of the situation, the likely subsequent event, the "
    "speaker's motivation and their emotional reaction. Input: {\"prompt\": <utterance>}."
)


class ToolError(Exception):
    pass


class DuplicateName(ToolError):
    pass


class UnknownTool(ToolError):
    pass


class MissingArgument(ToolError):
    pass


class BackendUnavailable(ToolError):
    pass


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    relation_set: tuple[str, ...]
    arg_schema: tuple[str, ...] = ("prompt",)

    def __post_init__(self) -> None:
        object.__setattr__(self, "relation_set", tuple(self.relation_set))
        object.__setattr__(self, "arg_schema", tuple(self.arg_schema))
        if not self.relation_set:
            raise ValueError("relation_set must be non-empty")
        if any(not r for r in self.relation_set) or len(set(self.relation_set)) != len(self.relation_set):
            raise ValueError("relation names must be non-empty and unique")


def comet_spec(name: str = TOOL_NAME) -> ToolSpec:
    return ToolSpec(name, TOOL_DESCRIPTION, COMET_RELATIONS)


def cicero_spec(name: str = TOOL_NAME) -> ToolSpec:
    return ToolSpec(name, CICERO_DESCRIPTION, CICERO_RELATIONS)


@dataclass(frozen=True)
class RelationResult:
    relation: str
    texts: tuple[str, ...]


@dataclass(frozen=True)
class Observation:
    tool_name: str
    results: tuple[RelationResult, ...]
    rendered: str


def render_observation(results: Sequence[RelationResult]) -> str:
    """One ``relation: a | b | c`` line per relation, in the given order."""
    return "\n".join(f"{r.relation}: {' | '.join(r.texts)}" for r in results)


class ToolBackend(Protocol):
    def query(self, prompt: str, relations: Sequence[str], k: int) -> dict[str, list[str]]:
        """Return generations keyed by relation name."""
        ...


def mock_generate(prompt: str, relation: str, k: int) -> list[str]:
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for i in range(k):
        digest = hashlib.sha256(f"{prompt}\x1f{relation}\x1f{i}".encode("utf-8")).hexdigest()
        out.append(f"{relation}-inference-{digest[:16]}")
    return out


class MockBackend:
    """In-process stand-in for a knowledge service; fully deterministic."""

    def __init__(self) -> None:
        self.calls: list[tuple[str, tuple[str, ...], int]] = []
        self._lock = threading.Lock()

    def query(self, prompt: str, relations: Sequence[str], k: int) -> dict[str, list[str]]:
        with self._lock:
            self.calls.append((prompt, tuple(relations), k))
        return {r: mock_generate(prompt, r, k) for r in relations}


class HttpBackend:
    """Client for a knowledge service speaking the JSON relation protocol.

    POST ``{"prompt", "relations", "k"}`` returns ``{"results": {relation: [text]}}``.
    Transport failures and 5xx/429 responses are retried; anything left after
    ``max_retries`` is BackendUnavailable.
    """

    def __init__(self, url: str, *, timeout: float = 60.0, max_retries: int = 3, backoff: float = 0.5,
                 max_in_flight: int = 8, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        self.url = url
        self.max_retries = max_retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep

    def query(self, prompt: str, relations: Sequence[str], k: int) -> dict[str, list[str]]:
        body = {"prompt": prompt, "relations": list(relations), "k": k}
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(self.url, json=body)
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = BackendUnavailable(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                results = resp.json()["results"]
            except (ValueError, KeyError, TypeError) as exc:
                raise BackendUnavailable(f"bad response body: {exc}") from None
            return {r: [str(t) for t in results.get(r, [])] for r in relations}
        raise BackendUnavailable(f"{self.url}: {last}")


@dataclass
class _Entry:
    spec: ToolSpec
    backend: ToolBackend
    k: int


@dataclass
class Registry:
    """Name -> (spec, backend). Backends can be swapped without touching callers."""

    _tools: dict[str, _Entry] = field(default_factory=dict)

    def register(self, spec: ToolSpec, backend: ToolBackend, *, k: int = 5) -> "Registry":
        if spec.name in self._tools:
            raise DuplicateName(spec.name)
        if k < 1:
            raise ValueError("k must be >= 1")
        self._tools[spec.name] = _Entry(spec, backend, k)
        return self

    def unregister(self, name: str) -> None:
        if self._tools.pop(name, None) is None:
            raise UnknownTool(name)

    def resolve(self, name: str) -> ToolSpec:
        try:
            return self._tools[name].spec
        except KeyError:
            raise UnknownTool(name) from None

    def specs(self) -> list[ToolSpec]:
        return [e.spec for e in self._tools.values()]

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def invoke(self, name: str, args: Mapping[str, Any]) -> Observation:
        try:
            entry = self._tools[name]
        except KeyError:
            raise UnknownTool(name) from None
        for key in entry.spec.arg_schema:
            if key not in args:
                raise MissingArgument(key)
        relations = entry.spec.relation_set
        raw = entry.backend.query(args["prompt"], relations, entry.k)
        results = tuple(RelationResult(r, tuple(raw.get(r, ()))) for r in relations)
        for r in results:
            if not r.texts:
                logger.warning("%s returned no generations for %s", name, r.relation)
        return Observation(name, results, render_observation(results))


def default_registry(relations: str = "comet", backend: ToolBackend | None = None, *, k: int = 5) -> Registry:
    spec = {"comet": comet_spec, "cicero": cicero_spec}[relations]()
    return Registry().register(spec, backend or MockBackend(), k=k)
