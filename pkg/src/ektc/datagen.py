"""Build a tool-trace corpus from an empathetic-dialogue corpus.

For every golden assistant turn an LLM judge first decides whether a tool
call is warranted (annotation); if so the tool is run and the judge decides
whether its result is relevant to the golden reply (reflection). Only when
both gates pass is a function_call/observation pair inserted before the reply.
"""
from __future__ import annotations

import json
import logging
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence, TypeVar

from . import prompts
from .dialogue import (Conversation, EmptyCorpus, Message, Role, ToolCallPayload, _substitute, render_history,
                       validate)
from .llm import ChatModel, LLMError, ask
from .tools import Observation, Registry, ToolError

logger = logging.getLogger(__name__)

T = TypeVar("T")


class DatagenError(Exception):
    pass


class JudgeUnparseable(DatagenError):
    pass


@dataclass(frozen=True)
class EdDialogue:
    id: str
    emotion: str | None
    turns: tuple[tuple[str, str], ...]  # (speaker, text)

    def __post_init__(self) -> None:
        turns = tuple((s, t) for s, t in self.turns)
        for i, (speaker, text) in enumerate(turns):
            expected = "user" if i % 2 == 0 else "assistant"
            if speaker != expected:
                raise DatagenError(f"{self.id}: turn {i} should be {expected}, got {speaker}")
            if not text.strip():
                raise DatagenError(f"{self.id}: turn {i} is empty")
        if len(turns) < 2:
            raise DatagenError(f"{self.id}: needs at least one assistant turn")
        object.__setattr__(self, "turns", turns)

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "EdDialogue":
        try:
            turns = [(t["speaker"], t["text"]) for t in obj["turns"]]
            did, emotion = obj["id"], obj.get("emotion")
        except (KeyError, TypeError) as exc:
            raise DatagenError(f"bad ED record: {exc}") from None
        if len(turns) % 2 == 1:
            # ED dialogues may end on the speaker; there is no golden reply to learn from.
            turns = turns[:-1]
        return cls(str(did), emotion, tuple(turns))

    def to_obj(self) -> dict[str, Any]:
        return {"id": self.id, "emotion": self.emotion,
                "turns": [{"speaker": s, "text": t} for s, t in self.turns]}


def read_ed(path) -> list[EdDialogue]:
    with open(path, encoding="utf-8") as fh:
        return [EdDialogue.from_obj(json.loads(line)) for line in fh if line.strip()]


def write_ed(path, dialogues: Iterable[EdDialogue]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(d.to_obj(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class AnnotationDecision:
    call_tool: bool
    rationale: str
    parsed: bool = True


@dataclass(frozen=True)
class Aspects:
    causal: bool = False
    intent: bool = False
    emotional: bool = False


@dataclass(frozen=True)
class ReflectionJudgment:
    relevant: bool
    aspects: Aspects
    rationale: str
    parsed: bool = True


@dataclass
class DatagenPolicy:
    full_context: bool = False
    jobs: int = 1
    judge_temperature: float = 0.0
    judge_max_tokens: int = 256


@dataclass(frozen=True)
class Provenance:
    dialogue_id: str
    turn: int
    annotate: bool
    reflect: bool | None
    inserted: bool


@dataclass
class CorpusStats:
    dialogues: int
    assistant_turns: int
    tool_call_turns: int
    tool_call_ratio: float
    dialogues_with_tool: int
    dialogue_tool_ratio: float
    per_emotion: dict[str, dict[str, float]] = field(default_factory=dict)
    skipped: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_YES_NO = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_RELEVANCE = re.compile(r"\b(relevant|irrelevant)\b", re.IGNORECASE)
_ASPECT = r"\b{}\w*(?:\s+consistency)?\s*[:=\-]?\s*(yes|no|true|false|high|low)\b"


def extract_yes_no(reply: str) -> bool:
    m = _YES_NO.search(reply)
    if m is None:
        raise JudgeUnparseable(reply)
    return m.group(1).lower() == "yes"


def extract_relevance(reply: str) -> tuple[bool, Aspects]:
    m = _RELEVANCE.search(reply)
    if m is None:
        raise JudgeUnparseable(reply)
    flags = {}
    for name in ("causal", "intent", "emotional"):
        am = re.search(_ASPECT.format(name), reply, re.IGNORECASE)
        flags[name] = am is not None and am.group(1).lower() in ("yes", "true", "high")
    return m.group(1).lower() == "relevant", Aspects(**flags)


def _tool_text(registry: Registry, tool: str) -> dict[str, str]:
    spec = registry.resolve(tool)
    return {"tool_name": spec.name, "tool_description": spec.description}


def annotator_prompt(context: Conversation, emotion: str | None, golden: str,
                     registry: Registry, tool: str) -> str:
    return _substitute(prompts.ANNOTATOR, {
        "task": prompts.TASK_DEFINITION, **_tool_text(registry, tool),
        "context": render_history(context.messages), "emotion": emotion or "unknown", "golden": golden,
    })


def reflector_prompt(observation: Observation, golden: str, registry: Registry, tool: str) -> str:
    return _substitute(prompts.REFLECTOR, {
        "task": prompts.TASK_DEFINITION, **_tool_text(registry, tool),
        "observation": observation.rendered, "golden": golden,
    })


def annotate(context: Conversation, emotion: str | None, golden: str, judge: ChatModel,
             registry: Registry, tool: str, policy: DatagenPolicy = DatagenPolicy()) -> AnnotationDecision:
    if not context.messages or context.messages[-1].role is not Role.USER:
        raise DatagenError("annotation context must end with a user message")
    reply = ask(judge, annotator_prompt(context, emotion, golden, registry, tool),
                temperature=policy.judge_temperature, max_tokens=policy.judge_max_tokens, endpoint="judge")
    try:
        return AnnotationDecision(extract_yes_no(reply), reply)
    except JudgeUnparseable:
        logger.warning("%s: annotator reply has no yes/no, treating as no-call: %r", context.id, reply[:80])
        return AnnotationDecision(False, reply, parsed=False)


def reflect(observation: Observation, golden: str, judge: ChatModel, registry: Registry, tool: str,
            policy: DatagenPolicy = DatagenPolicy()) -> ReflectionJudgment:
    reply = ask(judge, reflector_prompt(observation, golden, registry, tool),
                temperature=policy.judge_temperature, max_tokens=policy.judge_max_tokens, endpoint="judge")
    try:
        relevant, aspects = extract_relevance(reply)
        return ReflectionJudgment(relevant, aspects, reply)
    except JudgeUnparseable:
        logger.warning("reflector reply has no verdict, treating as irrelevant: %r", reply[:80])
        return ReflectionJudgment(False, Aspects(), reply, parsed=False)


def tool_argument(context: Conversation, full_context: bool) -> str:
    if full_context:
        return "\n".join(m.content for m in context.messages if m.role in (Role.USER, Role.ASSISTANT))
    return next(m.content for m in reversed(context.messages) if m.role is Role.USER)


def build_dialogue(ed: EdDialogue, registry: Registry, tool: str, judge: ChatModel,
                   policy: DatagenPolicy = DatagenPolicy()) -> tuple[Conversation, list[Provenance]]:
    """Run both gates over every assistant turn of one dialogue.

    Tool and judge failures propagate; the caller drops the whole dialogue.
    """
    conv = Conversation(ed.id, (), ed.emotion)
    log: list[Provenance] = []
    for i, (speaker, text) in enumerate(ed.turns):
        if speaker == "user":
            conv = conv.append(Message.user(text))
            continue
        turn = i // 2
        decision = annotate(conv, ed.emotion, text, judge, registry, tool, policy)
        inserted, relevant = False, None
        if decision.call_tool:
            arg = tool_argument(conv, policy.full_context)
            obs = registry.invoke(tool, {"prompt": arg})
            relevant = reflect(obs, text, judge, registry, tool, policy).relevant
            if relevant:
                conv = conv.append(Message.function_call(ToolCallPayload(tool, {"prompt": arg})),
                                   Message.observation(obs.rendered))
                inserted = True
        conv = conv.append(Message.assistant(text))
        log.append(Provenance(ed.id, turn, decision.call_tool, relevant, inserted))
    assert not validate(conv), validate(conv)
    return conv, log


@dataclass
class BuildResult:
    corpus: list[Conversation]
    provenance: list[Provenance]
    stats: CorpusStats
    failed: list[tuple[str, str]]


def build(dialogues: Sequence[EdDialogue], registry: Registry, tool: str, judge: ChatModel,
          policy: DatagenPolicy = DatagenPolicy()) -> BuildResult:
    registry.resolve(tool)

    def one(ed: EdDialogue):
        try:
            return build_dialogue(ed, registry, tool, judge, policy)
        except (ToolError, LLMError) as exc:
            logger.error("skipping dialogue %s: %s", ed.id, exc)
            return exc

    if policy.jobs > 1:
        with ThreadPoolExecutor(policy.jobs) as pool:
            outcomes = list(pool.map(one, dialogues))
    else:
        outcomes = [one(ed) for ed in dialogues]

    corpus, prov, failed = [], [], []
    for ed, out in zip(dialogues, outcomes):
        if isinstance(out, Exception):
            failed.append((ed.id, str(out)))
        else:
            corpus.append(out[0])
            prov.extend(out[1])
    stats = corpus_stats(corpus)
    stats.skipped = len(failed)
    return BuildResult(corpus, prov, stats, failed)


def corpus_stats(corpus: Sequence[Conversation]) -> CorpusStats:
    assistant = tool_turns = with_tool = 0
    per: dict[str, list[int]] = {}
    for conv in corpus:
        a = t = 0
        pending = False
        for m in conv.messages:
            if m.role is Role.FUNCTION_CALL:
                pending = True
            elif m.role is Role.ASSISTANT:
                a += 1
                t += pending
                pending = False
        assistant += a
        tool_turns += t
        with_tool += t > 0
        row = per.setdefault(conv.emotion_label or "unknown", [0, 0, 0])
        row[0] += 1
        row[1] += a
        row[2] += t
    return CorpusStats(
        dialogues=len(corpus),
        assistant_turns=assistant,
        tool_call_turns=tool_turns,
        tool_call_ratio=tool_turns / assistant if assistant else 0.0,
        dialogues_with_tool=with_tool,
        dialogue_tool_ratio=with_tool / len(corpus) if corpus else 0.0,
        per_emotion={e: {"dialogues": d, "assistant_turns": a, "tool_call_turns": t,
                         "tool_call_ratio": t / a if a else 0.0}
                     for e, (d, a, t) in sorted(per.items())},
    )


SPLIT_PRESETS = {
    # 8:1:1 over dialogues
    "811": (0.8, 0.1, 0.1),
    # hold out a tenth for test, then a tenth of the remaining training data for validation
    "holdout10": (0.81, 0.09, 0.1),
}


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment: each size is within one of ratio * n."""
    exact = [r * n for r in ratios]
    sizes = [math.floor(x) for x in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(corpus: Sequence[T], ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> tuple[list[T], ...]:
    """Seeded random partition. Items keep their input order within each part."""
    if not corpus:
        raise EmptyCorpus("cannot split an empty corpus")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    idx = list(range(len(corpus)))
    random.Random(seed).shuffle(idx)
    parts, start = [], 0
    for size in split_sizes(len(corpus), ratios):
        chosen = sorted(idx[start:start + size])
        parts.append([corpus[i] for i in chosen])
        start += size
    return tuple(parts)
