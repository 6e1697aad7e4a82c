"""Conversation data model, trace grammar, model-output parsing and prompt rendering.

A tool-augmented dialogue is a flat list of messages. Each assistant turn is
a user message, zero or more (function_call, observation) pairs, and the final
assistant reply::

    user (function_call observation)* assistant

System messages carry the instruction preamble and are ignored by the grammar.
"""
from __future__ import annotations

import enum
import json
import logging
import re
import string
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

#: The 32 emotion labels of the EmpatheticDialogues corpus.
EMOTION_LABELS = (
    "afraid", "angry", "annoyed", "anticipating", "anxious", "apprehensive",
    "ashamed", "caring", "confident", "content", "devastated", "disappointed",
    "disgusted", "embarrassed", "excited", "faithful", "furious", "grateful",
    "guilty", "hopeful", "impressed", "jealous", "joyful", "lonely", "nostalgic",
    "prepared", "proud", "sad", "sentimental", "surprised", "terrified", "trusting",
)


class DialogueError(Exception):
    pass


class MalformedToolCall(DialogueError):
    """An ``Action:`` line was found but its input could not be used."""


class UnknownPlaceholder(DialogueError):
    pass


class SchemaError(DialogueError):
    pass


class EmptyCorpus(ValueError):
    pass


class Role(str, enum.Enum):
    USER = "user"
    ASSISTANT = "assistant"
    FUNCTION_CALL = "function_call"
    OBSERVATION = "observation"
    SYSTEM = "system"


@dataclass(frozen=True)
class ToolCallPayload:
    name: str
    arguments: Mapping[str, Any]

    @property
    def prompt(self) -> str:
        return self.arguments["prompt"]


@dataclass(frozen=True)
class Message:
    role: Role
    content: str
    tool_call: ToolCallPayload | None = None

    @classmethod
    def user(cls, text: str) -> "Message":
        return cls(Role.USER, text)

    @classmethod
    def assistant(cls, text: str) -> "Message":
        return cls(Role.ASSISTANT, text)

    @classmethod
    def function_call(cls, payload: ToolCallPayload) -> "Message":
        return cls(Role.FUNCTION_CALL, render_action(payload), payload)

    @classmethod
    def observation(cls, text: str) -> "Message":
        return cls(Role.OBSERVATION, text)


@dataclass(frozen=True)
class Conversation:
    id: str
    messages: tuple[Message, ...] = ()
    emotion_label: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.messages, tuple):
            object.__setattr__(self, "messages", tuple(self.messages))

    def append(self, *messages: Message) -> "Conversation":
        return Conversation(self.id, self.messages + messages, self.emotion_label)

    def roles(self) -> list[Role]:
        return [m.role for m in self.messages]


@dataclass(frozen=True)
class ToolInvocation:
    payload: ToolCallPayload


@dataclass(frozen=True)
class DirectResponse:
    text: str


ModelOutput = ToolInvocation | DirectResponse


# --- Action grammar ---------------------------------------------------------

_ACTION_RE = re.compile(
    r"^[ \t]*(?:assistant[ \t]*:?[ \t]*)?action[ \t]*:[ \t]*(?P<rest>.*)$",
    re.IGNORECASE | re.MULTILINE,
)
_INPUT_RE = re.compile(r"(?:^|\s)(?:assistant[ \t]*:?[ \t]*)?action[ \t]+input[ \t]*:", re.IGNORECASE)
_ROLE_PREFIX_RE = re.compile(r"^\s*(?:assistant|gpt)\s*:\s*", re.IGNORECASE)
_NEXT_TURN_RE = re.compile(r"^\s*(?:user|human|observation)\s*:", re.IGNORECASE | re.MULTILINE)


def render_action(payload: ToolCallPayload) -> str:
    """Canonical Action/Action Input block for a tool call."""
    args = json.dumps(dict(payload.arguments), ensure_ascii=False)
    return f"Action: {payload.name}\nAction Input: {args}"


def parse_model_output(raw: str) -> ModelOutput:
    """Classify raw model text as a tool invocation or a direct reply.

    Raises MalformedToolCall when an ``Action:`` line is present but the
    ``Action Input:`` payload is missing, not a JSON object, or lacks ``prompt``.
    """
    m = _ACTION_RE.search(raw)
    if m is None:
        return DirectResponse(_strip_scaffolding(raw))

    after = raw[m.start("rest"):]
    im = _INPUT_RE.search(after)
    if im is None:
        raise MalformedToolCall("Action without Action Input")
    name = after[: im.start()].strip()
    if not name or "\n" in name:
        raise MalformedToolCall(f"bad tool name {name!r}")

    body = after[im.end():].lstrip()
    try:
        obj, end = json.JSONDecoder().raw_decode(body)
    except json.JSONDecodeError as exc:
        raise MalformedToolCall(f"unparseable Action Input: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedToolCall("Action Input is not an object")
    if not isinstance(obj.get("prompt"), str):
        raise MalformedToolCall("Action Input has no string 'prompt'")
    trailing = body[end:].strip()
    if trailing:
        logger.warning("discarding %d chars after tool call", len(trailing))
    return ToolInvocation(ToolCallPayload(name, obj))


def _strip_scaffolding(raw: str) -> str:
    text = _ROLE_PREFIX_RE.sub("", raw, count=1)
    nxt = _NEXT_TURN_RE.search(text)
    if nxt is not None and nxt.start() > 0:
        text = text[: nxt.start()]
    return text.strip()


# --- Grammar validation -----------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str
    index: int

    def __str__(self) -> str:
        return f"{self.rule}@{self.index}"


# states of the turn automaton
_START, _USER, _CALL, _OBS, _DONE = range(5)


def validate(conv: Conversation, *, open_turn: bool = False) -> list[Violation]:
    """Check a conversation against the trace grammar.

    With ``open_turn`` a trailing unfinished turn (a user message, possibly
    followed by completed function_call/observation pairs) is also accepted;
    inference builds on such prefixes.
    """
    out: list[Violation] = []
    state = _START
    last = -1
    for i, msg in enumerate(conv.messages):
        has_call = msg.tool_call is not None
        if has_call != (msg.role is Role.FUNCTION_CALL):
            out.append(Violation("ToolCallMismatch", i))
        if msg.role in (Role.USER, Role.ASSISTANT, Role.OBSERVATION) and not msg.content.strip():
            out.append(Violation("EmptyContent", i))
        if msg.role is Role.SYSTEM:
            continue

        if state == _CALL and msg.role is not Role.OBSERVATION:
            out.append(Violation("FunctionCallWithoutObservation", last))
        if msg.role is Role.USER:
            if state == _START or state == _DONE:
                pass
            elif state == _OBS:
                out.append(Violation("UserAfterObservation", i))
            elif state == _USER:
                out.append(Violation("ConsecutiveUser", i))
            state = _USER
        elif msg.role is Role.ASSISTANT:
            if state == _START:
                out.append(Violation("FirstMessageNotUser", i))
            elif state == _DONE:
                out.append(Violation("AssistantWithoutUser", i))
            state = _DONE
        elif msg.role is Role.FUNCTION_CALL:
            if state == _START:
                out.append(Violation("FirstMessageNotUser", i))
            elif state == _DONE:
                out.append(Violation("FunctionCallOutsideTurn", i))
            state = _CALL
        else:  # observation
            if state != _CALL:
                if state == _START:
                    out.append(Violation("FirstMessageNotUser", i))
                out.append(Violation("ObservationWithoutFunctionCall", i))
            state = _OBS
        last = i

    if state == _START:
        out.append(Violation("EmptyConversation", 0))
    elif state == _CALL:
        out.append(Violation("FunctionCallWithoutObservation", last))
    elif state != _DONE and not open_turn:
        out.append(Violation("IncompleteTurn", last))
    return out


# --- JSON Lines records -----------------------------------------------------

def to_record(conv: Conversation) -> dict[str, Any]:
    msgs = []
    for m in conv.messages:
        d: dict[str, Any] = {"role": m.role.value, "content": m.content}
        if m.tool_call is not None:
            d["tool_call"] = {"name": m.tool_call.name, "arguments": dict(m.tool_call.arguments)}
        msgs.append(d)
    return {"id": conv.id, "emotion": conv.emotion_label, "messages": msgs}


def serialize_record(conv: Conversation) -> str:
    problems = validate(conv)
    if problems:
        raise SchemaError(f"refusing to serialize invalid conversation {conv.id}: "
                          + ", ".join(map(str, problems)))
    if any(m.role is Role.SYSTEM for m in conv.messages):
        # the instruction preamble is a rendering concern, never corpus data
        raise SchemaError(f"{conv.id}: system messages are not persisted")
    return json.dumps(to_record(conv), ensure_ascii=False)


def from_record(obj: Any) -> Conversation:
    if not isinstance(obj, dict):
        raise SchemaError("record is not an object")
    for key in ("id", "messages"):
        if key not in obj:
            raise SchemaError(f"missing field {key!r}")
    if not isinstance(obj["id"], str):
        raise SchemaError("id must be a string")
    emotion = obj.get("emotion")
    if emotion is not None and not isinstance(emotion, str):
        raise SchemaError("emotion must be a string or null")
    if not isinstance(obj["messages"], list):
        raise SchemaError("messages must be an array")

    messages = []
    for j, m in enumerate(obj["messages"]):
        if not isinstance(m, dict) or "role" not in m or "content" not in m:
            raise SchemaError(f"message {j} needs role and content")
        try:
            role = Role(m["role"])
        except ValueError:
            raise SchemaError(f"unknown role {m['role']!r}") from None
        if not isinstance(m["content"], str):
            raise SchemaError(f"message {j} content must be a string")
        call = None
        if m.get("tool_call") is not None:
            tc = m["tool_call"]
            if not isinstance(tc, dict) or not isinstance(tc.get("name"), str) \
                    or not isinstance(tc.get("arguments"), dict):
                raise SchemaError(f"message {j} has a malformed tool_call")
            call = ToolCallPayload(tc["name"], tc["arguments"])
        messages.append(Message(role, m["content"], call))
    return Conversation(obj["id"], tuple(messages), emotion)


def deserialize_record(line: str) -> Conversation:
    if not line.strip():
        raise SchemaError("empty line")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not JSON: {exc}") from None
    return from_record(obj)


def read_corpus(path) -> list[Conversation]:
    with open(path, encoding="utf-8") as fh:
        return [deserialize_record(line) for line in fh if line.strip()]


def write_corpus(path, convs: Iterable[Conversation]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in convs:
            fh.write(serialize_record(c) + "\n")


# --- Prompt rendering -------------------------------------------------------

ROLE_LABELS = {
    Role.USER: "USER",
    Role.ASSISTANT: "ASSISTANT",
    Role.FUNCTION_CALL: "ASSISTANT",
    Role.OBSERVATION: "Observation",
}

DEFAULT_SYSTEM = (
    "A chat between a user and an empathetic assistant. The assistant understands "
    "the user's feelings and intentions and replies with care."
)

# ReAct-style instructions, modelled on the common tool-learning chat template.
DEFAULT_TEMPLATE = """${tool_block}Conversation so far:
$history
${directive}ASSISTANT:"""

TOOL_BLOCK = """You have access to the following tools:
$tool_descriptions

If the user's emotional state or intention is unclear and commonsense knowledge would help, call a tool using exactly this format:
Action: the tool name, one of [$tool_names]
Action Input: the tool input as a JSON object, e.g. {"prompt": "the user's utterance"}

The tool result will be returned as an Observation. If no tool is needed, reply to the user directly.

"""


@dataclass(frozen=True)
class PromptTemplate:
    text: str = DEFAULT_TEMPLATE
    system: str = DEFAULT_SYSTEM
    tool_block: str = TOOL_BLOCK


def _substitute(template: str, values: Mapping[str, str]) -> str:
    t = string.Template(template)
    for mo in t.pattern.finditer(template):
        name = mo.group("named") or mo.group("braced")
        if name is not None and name not in values:
            raise UnknownPlaceholder(name)
        if mo.group("invalid") is not None:
            raise UnknownPlaceholder(mo.group(0))
    return t.substitute(values)


def render_history(messages: Sequence[Message]) -> str:
    lines = []
    for m in messages:
        if m.role is Role.SYSTEM:
            continue
        lines.append(f"{ROLE_LABELS[m.role]}: {m.content}")
    return "\n".join(lines)


def render_prompt(conv: Conversation, specs: Sequence[Any], template: PromptTemplate = PromptTemplate(),
                  extra: Mapping[str, str] | None = None) -> str:
    """Render the policy-model prompt.

    ``specs`` are objects with ``name`` and ``description`` (ToolSpec). The
    tool block is omitted entirely when no tools are given.
    """
    values = {
        "system": template.system,
        "history": render_history(conv.messages),
        "tool_names": ", ".join(s.name for s in specs),
        "tool_descriptions": "\n".join(f"{s.name}: {s.description}" for s in specs),
        "directive": "",
    }
    values["tool_block"] = _substitute(template.tool_block, values) if specs else ""
    if extra:
        values.update(extra)
    return _substitute(template.text, values)


def from_ed_turns(dialogue_id: str, emotion: str | None, utterances: Sequence[str]) -> Conversation:
    """Alternating user/assistant utterances to a Conversation."""
    msgs = tuple(Message.user(u) if i % 2 == 0 else Message.assistant(u) for i, u in enumerate(utterances))
    return Conversation(dialogue_id, msgs, emotion)


@dataclass(frozen=True)
class Turn:
    """One assistant turn: the context before it and the golden reply."""
    index: int
    context: Conversation
    golden: str
    trace: tuple[Message, ...] = field(default=())


def assistant_turns(conv: Conversation, *, keep_tools: bool = False) -> list[Turn]:
    """Split a conversation into teacher-forced turns.

    Context holds the golden history; tool traces are dropped unless
    ``keep_tools``. ``trace`` is the tool trace that preceded each reply.
    """
    turns = []
    history: list[Message] = []
    pending: list[Message] = []
    k = 0
    for m in conv.messages:
        if m.role is Role.ASSISTANT:
            ctx = Conversation(conv.id, tuple(history), conv.emotion_label)
            turns.append(Turn(k, ctx, m.content, tuple(pending)))
            if keep_tools:
                history.extend(pending)
            history.append(m)
            pending = []
            k += 1
        elif m.role in (Role.FUNCTION_CALL, Role.OBSERVATION):
            pending.append(m)
        elif m.role is Role.USER:
            history.append(m)
    return turns
