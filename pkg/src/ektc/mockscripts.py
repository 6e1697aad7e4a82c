"""Build MockLLM scripts from corpora, for offline runs of the whole pipeline.

The scripts are plain JSON (``{"rules": [...], "strict": ...}``) so they can
be written to disk and referenced as ``mock:<path>`` from the command line.
"""
from __future__ import annotations

import json
from typing import Any, Iterable, Sequence

from .dialogue import Conversation, Role, render_action
from .tools import TOOL_NAME

# headings the judge templates put right before the golden reply
_ANNOTATOR_GOLDEN = "Golden response of the assistant:\n"
_REFLECTOR_GOLDEN = "Golden response:\n"


def _rule(reply: str, *contains: str) -> dict[str, Any]:
    return {"reply": reply, "contains": list(contains)}


def gate_judge(passing: Iterable[str], annotate_only: Iterable[str] = ()) -> dict[str, Any]:
    """Judge that says yes/relevant for the golden replies in ``passing``.

    Replies in ``annotate_only`` pass the annotator but not the reflector.
    Everything else is annotated "no".
    """
    rules = []
    for g in passing:
        rules.append(_rule("relevant\ncausal: yes\nintent: yes\nemotional: yes", _REFLECTOR_GOLDEN + g + "\n\n"))
        rules.append(_rule("yes", _ANNOTATOR_GOLDEN + g + "\n\n"))
    for g in annotate_only:
        rules.append(_rule("yes", _ANNOTATOR_GOLDEN + g + "\n\n"))
    rules.append(_rule("irrelevant", _REFLECTOR_GOLDEN))
    rules.append(_rule("no", _ANNOTATOR_GOLDEN))
    return {"rules": rules, "strict": True}


def echo_policy(corpus: Sequence[Conversation], tool_name: str = TOOL_NAME) -> dict[str, Any]:
    """Policy that reproduces each golden reply under teacher forcing.

    Turns that carry a tool trace in ``corpus`` first emit the same call, then
    answer once an observation from the mock backend is in the prompt. Later
    turns are listed first because their prompts contain the earlier turns.
    """
    rules = []
    for conv in corpus:
        turns = []
        user = None
        called = None
        for m in conv.messages:
            if m.role is Role.USER:
                user, called = m.content, None
            elif m.role is Role.FUNCTION_CALL:
                called = m.tool_call
            elif m.role is Role.ASSISTANT:
                turns.append((user, called, m.content))
        for user, called, golden in reversed(turns):
            key = f"USER: {user}\n"
            if called is not None:
                rules.append(_rule(golden, key, "-inference-"))
                rules.append(_rule(render_action(called), key))
            else:
                rules.append(_rule(golden, key))
    return {"rules": rules, "strict": True}


def dump(script: dict[str, Any], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(script, fh, ensure_ascii=False, indent=1)
        fh.write("\n")
