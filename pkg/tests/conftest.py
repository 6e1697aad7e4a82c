import random

import pytest

from ektc.datagen import EdDialogue
from ektc.dialogue import Conversation, Message, ToolCallPayload
from ektc.llm import MockLLM, Rule
from ektc.tools import TOOL_NAME, default_registry

# Markers in golden replies steer the scripted judges. The annotator marker
# must directly follow the golden-reply heading, because earlier golden replies
# are quoted in the context; the reflector prompt quotes only the current one.
ANN_YES = "ANN+"
REL_YES = "REL+"
ANNOTATOR_HEAD = "Golden response of the assistant:\n"
REFLECTOR_HEAD = "Tool result:\n"


def gate_judge(strict=True):
    """Judge that answers the annotator/reflector from markers in the golden reply."""
    return MockLLM([
        Rule("relevant\ncausal: yes\nintent: yes\nemotional: no", (REFLECTOR_HEAD, REL_YES)),
        Rule("irrelevant", (REFLECTOR_HEAD,)),
        Rule("yes, the user is upset", (ANNOTATOR_HEAD + ANN_YES,)),
        Rule("no", (ANNOTATOR_HEAD,)),
    ], strict=strict)


def make_ed(n, turns=1, passing=(), annotate_only=(), seed=0):
    """n dialogues of ``turns`` assistant turns. ``passing``/``annotate_only`` are
    sets of global turn numbers (dialogue * turns + turn)."""
    rng = random.Random(seed)
    emotions = ["sad", "joyful", "afraid", "proud"]
    out = []
    for i in range(n):
        utts = []
        for t in range(turns):
            g = i * turns + t
            utts.append(("user", f"user says {rng.randrange(10**6)} in dialogue {i} turn {t}"))
            if g in passing:
                text = f"{ANN_YES} reply {t} to dialogue {i} {REL_YES}"
            elif g in annotate_only:
                text = f"{ANN_YES} reply {t} to dialogue {i}"
            else:
                text = f"plain reply {t} to dialogue {i}"
            utts.append(("assistant", text))
        out.append(EdDialogue(f"d{i}", emotions[i % len(emotions)], tuple(utts)))
    return out


@pytest.fixture
def registry():
    return default_registry("comet")


@pytest.fixture
def fig8_trace():
    """A worked tool-trace example: a direct reply, then a tool-assisted one."""
    payload = ToolCallPayload(TOOL_NAME, {"prompt": "I was surprised when my mom bought me a car"})
    return Conversation("fig8", (
        Message.user("Hi, how are you?"),
        Message.assistant("I'm fine. How about you?"),
        Message.user("I was surprised when my mom bought me a car"),
        Message.function_call(payload),
        Message.observation("xReact: happy | surprised"),
        Message.assistant("Wow, that is a wonderful surprise! What kind of car is it?"),
    ), "surprised")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n][1])
