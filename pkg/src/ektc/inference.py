"""Tool-calling response loop and teacher-forced batch inference."""
from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

from .dialogue import (_ACTION_RE, Conversation, DirectResponse, EmptyCorpus, MalformedToolCall, Message, PromptTemplate,
                       Role, ToolCallPayload, ToolInvocation, assistant_turns, parse_model_output,
                       _strip_scaffolding, render_prompt, validate)
from .llm import ChatModel, ChatParams, ChatRequest, LLMError
from .tools import Registry, ToolError, UnknownTool

logger = logging.getLogger(__name__)

FORCE_DIRECT = "(Do not call any tool now. Reply to the user directly.)\n"
FALLBACK_RESPONSE = "I hear you. Could you tell me a bit more about how you feel?"


class OnMalformed(str, enum.Enum):
    FALLBACK = "fallback"
    ERROR = "error"


class ToolArgSource(str, enum.Enum):
    MODEL = "model"
    LAST_USER_UTTERANCE = "last_user_utterance"
    FULL_CONTEXT = "full_context"


@dataclass
class InferencePolicy:
    max_tool_calls_per_turn: int = 1
    on_malformed: OnMalformed = OnMalformed.FALLBACK
    tool_arg_source: ToolArgSource = ToolArgSource.MODEL
    context_chars: int | None = None
    fallback_response: str = FALLBACK_RESPONSE
    temperature: float = 0.0
    max_tokens: int = 256

    def __post_init__(self) -> None:
        if self.max_tool_calls_per_turn < 0:
            raise ValueError("max_tool_calls_per_turn must be >= 0")
        self.on_malformed = OnMalformed(self.on_malformed)
        self.tool_arg_source = ToolArgSource(self.tool_arg_source)


@dataclass(frozen=True)
class TurnTrace:
    messages: tuple[Message, ...]
    tool_used: bool
    model_queries: int
    fell_back: bool = False

    @property
    def observations(self) -> list[str]:
        return [m.content for m in self.messages if m.role is Role.OBSERVATION]


def truncate_history(conv: Conversation, budget: int | None) -> Conversation:
    """Drop whole completed turns, oldest first, until the rendered history fits.

    The current (last) turn is always kept, even if it alone exceeds the budget.
    """
    if budget is None:
        return conv
    msgs = list(conv.messages)
    starts = [i for i, m in enumerate(msgs) if m.role is Role.USER]
    size = sum(len(m.content) for m in msgs)
    cut = 0
    for s in starts[1:]:
        if size <= budget:
            break
        size -= sum(len(m.content) for m in msgs[cut:s])
        cut = s
    if cut:
        logger.info("%s: truncated %d oldest messages to fit %d chars", conv.id, cut, budget)
    if size > budget:
        logger.warning("%s: current turn alone is %d chars, over the %d budget", conv.id, size, budget)
    return Conversation(conv.id, tuple(msgs[cut:]), conv.emotion_label)


def _tool_args(payload: ToolCallPayload, conv: Conversation, source: ToolArgSource) -> dict[str, Any]:
    args = dict(payload.arguments)
    if source is ToolArgSource.LAST_USER_UTTERANCE:
        args["prompt"] = next(m.content for m in reversed(conv.messages) if m.role is Role.USER)
    elif source is ToolArgSource.FULL_CONTEXT:
        args["prompt"] = "\n".join(m.content for m in conv.messages if m.role in (Role.USER, Role.ASSISTANT))
    return args


def _leftover(raw: str) -> str:
    """Text a model wrote before an Action block, if any."""
    m = _ACTION_RE.search(raw)
    return _strip_scaffolding(raw[: m.start()] if m else raw)


def respond(conv: Conversation, model: ChatModel, registry: Registry,
            policy: InferencePolicy = InferencePolicy(), template: PromptTemplate = PromptTemplate(),
            endpoint: str = "policy") -> tuple[str, TurnTrace]:
    """Generate the assistant reply to the last user message of ``conv``.

    Tool calls are executed and threaded back as observations. After
    ``max_tool_calls_per_turn`` calls (or a malformed call under the fallback
    policy) the next query carries an instruction to answer directly, so at
    most ``max_tool_calls_per_turn + 1`` queries are made.
    """
    if validate(conv, open_turn=True) or conv.messages[-1].role is not Role.USER:
        raise ValueError(f"{conv.id}: respond needs a valid conversation ending with a user message")

    params = ChatParams(policy.temperature, policy.max_tokens, ("\nObservation:", "\nUSER:"))
    appended: list[Message] = []
    calls = queries = 0
    forced = policy.max_tool_calls_per_turn == 0
    fell_back = False
    specs = registry.specs()

    while True:
        current = truncate_history(conv.append(*appended), policy.context_chars)
        prompt = render_prompt(current, specs, template, {"directive": FORCE_DIRECT if forced else ""})
        raw = model.complete(ChatRequest.of(prompt, system=template.system, params=params, endpoint=endpoint))
        queries += 1

        try:
            out = parse_model_output(raw)
            if isinstance(out, ToolInvocation) and out.payload.name not in registry:
                raise UnknownTool(out.payload.name)
        except (MalformedToolCall, UnknownTool) as exc:
            if policy.on_malformed is OnMalformed.ERROR:
                raise
            logger.warning("%s: bad tool call (%s)", conv.id, exc)
            if forced:
                text, fell_back = _leftover(raw) or policy.fallback_response, True
                break
            forced = True
            continue

        if isinstance(out, DirectResponse):
            text = out.text
            if not text:
                text, fell_back = policy.fallback_response, True
            break

        if forced:
            # the model insists on a tool after being told to answer
            text, fell_back = _leftover(raw) or policy.fallback_response, True
            break

        args = _tool_args(out.payload, conv, policy.tool_arg_source)
        obs = registry.invoke(out.payload.name, args)
        appended += [Message.function_call(ToolCallPayload(out.payload.name, args)),
                     Message.observation(obs.rendered)]
        calls += 1
        if calls >= policy.max_tool_calls_per_turn:
            forced = True

    appended.append(Message.assistant(text))
    trace = TurnTrace(tuple(appended), calls > 0, queries, fell_back)
    return text, trace


@dataclass
class BatchResult:
    generations: list[dict[str, Any]]
    turns: int
    tool_turns: int
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def tool_ratio(self) -> float:
        return self.tool_turns / self.turns if self.turns else 0.0

    def summary(self) -> dict[str, Any]:
        return {"turns": self.turns, "tool_turns": self.tool_turns, "tool_ratio": self.tool_ratio,
                "failed_dialogues": [{"id": i, "error": e} for i, e in self.failures]}


def batch_infer(corpus: Sequence[Conversation], model: ChatModel, registry: Registry,
                policy: InferencePolicy = InferencePolicy(), template: PromptTemplate = PromptTemplate(),
                jobs: int = 1) -> BatchResult:
    """One generated reply per golden assistant turn, given the golden history."""
    if not corpus:
        raise EmptyCorpus("no dialogues to run")

    def one(conv: Conversation):
        rows = []
        try:
            for turn in assistant_turns(conv):
                text, trace = respond(turn.context, model, registry, policy, template)
                obs = trace.observations
                rows.append({"dialogue_id": conv.id, "turn": turn.index, "response": text,
                             "tool_used": trace.tool_used, "observation": obs[-1] if obs else None})
        except (ToolError, LLMError, MalformedToolCall, ValueError) as exc:
            logger.error("dialogue %s failed: %s", conv.id, exc)
            return exc
        return rows

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(one, corpus))
    else:
        outcomes = [one(c) for c in corpus]

    result = BatchResult([], 0, 0)
    for conv, out in zip(corpus, outcomes):
        if isinstance(out, Exception):
            result.failures.append((conv.id, str(out)))
            continue
        result.generations.extend(out)
        result.turns += len(out)
        result.tool_turns += sum(r["tool_used"] for r in out)
    return result


def write_generations(path, rows: Sequence[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


def read_generations(path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
