"""Acceptance gate: eight criteria, each with its tolerance and runtime budget.

Run with ``pytest tests/test_acceptance.py`` (one PASS/FAIL line per criterion
is printed in the terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""
import functools
import json
import random
import re
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from conftest import gate_judge, make_ed  # noqa: E402
from ektc import mockscripts  # noqa: E402
from ektc.cli import run  # noqa: E402
from ektc.datagen import build, split, split_sizes, write_ed  # noqa: E402
from ektc.dialogue import (Conversation, Message, Role, ToolCallPayload, deserialize_record,  # noqa: E402
                           read_corpus, serialize_record, validate)
from ektc.evalharness import AbItem, render_tally, run_ab, tally  # noqa: E402
from ektc.inference import FORCE_DIRECT, InferencePolicy, batch_infer, respond  # noqa: E402
from ektc.llm import MockLLM, Rule  # noqa: E402
from ektc.metrics import bleu, distinct, rouge  # noqa: E402
from ektc.tools import TOOL_NAME, MockBackend, Registry, cicero_spec, comet_spec  # noqa: E402

RESULTS = {}


def gate(number, title, budget):
    """Time the criterion body, record PASS/FAIL, and fail the test on error or overrun."""
    def wrap(fn):
        @functools.wraps(fn)
        def test(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
                ok, why = True, detail or ""
            except AssertionError as exc:
                ok, why = False, str(exc).splitlines()[0] if str(exc) else "assertion failed"
            elapsed = time.perf_counter() - t0
            if ok and elapsed >= budget:
                ok, why = False, f"runtime {elapsed:.2f}s over the {budget}s budget"
            RESULTS[number] = (ok, f"[{'PASS' if ok else 'FAIL'}] {number}. {title} "
                                   f"({elapsed:.2f}s / {budget}s) {why}".rstrip())
            assert ok, RESULTS[number][1]
        return test
    return wrap


@gate(1, "metric oracle suite", 1.0)
def test_c1_metric_oracle():
    assert len(oracles.PINNED) >= 20
    worst = 0.0
    for cand, ref in oracles.PINNED:
        c, r = cand.split(), ref.split()
        for n in range(1, 5):
            worst = max(worst, abs(bleu([c], [r], n) - oracles.bleu([c], [r], n)))
        for v in ("r1", "r2", "rl"):
            worst = max(worst, abs(rouge(c, r, v) - oracles.rouge(c, r, v)))
        for n in (1, 2):
            if len(c) >= n:
                worst = max(worst, abs(distinct([c], n) - oracles.distinct([c], n)))
    assert worst <= 1e-9, f"max deviation {worst:.3g}"
    x = "i am so sorry to hear that".split()
    assert all(bleu([x], [x], n) == 1.0 for n in range(1, 5))
    assert all(rouge(x, x, v) == 1.0 for v in ("r1", "r2", "rl"))
    assert distinct([x], 1) == distinct([x], 2) == 1.0
    return f"{len(oracles.PINNED)} pairs, max deviation {worst:.1e}"


_COMPLETE = re.compile(r"(U(FO)*A)+")
_LETTER = {Role.USER: "U", Role.ASSISTANT: "A", Role.FUNCTION_CALL: "F", Role.OBSERVATION: "O"}


def _random_roles(rng):
    if rng.random() < 0.5:
        # grammatical skeleton, then maybe one mutation
        seq = []
        for _ in range(rng.randint(1, 4)):
            seq += ["U"] + ["F", "O"] * rng.choice([0, 0, 1, 2]) + ["A"]
        if rng.random() < 0.5 and seq:
            i = rng.randrange(len(seq))
            op = rng.choice(["drop", "dup", "swap"])
            if op == "drop":
                del seq[i]
            elif op == "dup":
                seq.insert(i, seq[i])
            else:
                seq[i] = rng.choice("UAFO")
        return "".join(seq)
    return "".join(rng.choice("UAFO") for _ in range(rng.randint(0, 9)))


def _build(roles, k):
    msgs = []
    for j, r in enumerate(roles):
        if r == "U":
            msgs.append(Message.user(f"user {k}.{j} ü"))
        elif r == "A":
            msgs.append(Message.assistant(f"reply {k}.{j}"))
        elif r == "F":
            msgs.append(Message.function_call(ToolCallPayload(TOOL_NAME, {"prompt": f"p{k}.{j}"})))
        else:
            msgs.append(Message.observation(f"xReact: r{k}.{j}"))
    return Conversation(f"c{k}", tuple(msgs), "sad")


@gate(2, "grammar property suite", 10.0)
def test_c2_grammar():
    rng = random.Random(2)
    accepted = 0
    for k in range(10_000):
        roles = _random_roles(rng)
        conv = _build(roles, k)
        expect = _COMPLETE.fullmatch(roles) is not None
        got = validate(conv) == []
        assert got == expect, f"{roles!r}: validate says {got}, grammar says {expect}"
        if got:
            accepted += 1
            line = serialize_record(conv)
            back = deserialize_record(line)
            assert back == conv and serialize_record(back) == line, f"round trip broke on {roles!r}"
            assert "".join(_LETTER[m.role] for m in back.messages) == roles
    assert 1000 < accepted < 9000, f"unbalanced sample: {accepted} accepted"
    return f"10000 sequences, {accepted} accepted and round-tripped"


@gate(3, "datagen gate suite", 30.0)
def test_c3_datagen_gates():
    n, turns = 1000, 5
    total = n * turns
    target = round(0.2646 * total)  # 1323 of 5000
    rng = random.Random(0)
    passing = set(rng.sample(range(total), target))
    annotate_only = set(rng.sample(sorted(set(range(total)) - passing), 400))
    eds = make_ed(n, turns, passing, annotate_only)
    backend = MockBackend()
    reg = Registry().register(comet_spec(), backend)
    judge = gate_judge()
    res = build(eds, reg, TOOL_NAME, judge)
    prov = {(p.dialogue_id, p.turn): p for p in res.provenance}
    inserted = {g for g in range(total) if prov[(f"d{g // turns}", g % turns)].inserted}
    assert inserted == passing, "inserted turns differ from annotate=yes AND reflect=relevant"
    assert all(p.inserted == (p.annotate and bool(p.reflect)) for p in res.provenance)
    # annotator "no" never reaches the tool or the reflector
    assert len(backend.calls) == len(passing) + len(annotate_only)
    assert all(validate(c) == [] for c in res.corpus)
    ratio = res.stats.tool_call_ratio
    assert abs(ratio - 0.2646) <= 1e-4, f"tool_call_ratio {ratio}"
    return f"tool_call_ratio={ratio:.4f} over {res.stats.assistant_turns} turns"


CALL = 'Action: EmotionKnowledgebase\nAction Input: {"prompt": "I was surprised when my mom bought me a car"}'


@gate(4, "inference loop suite", 5.0)
def test_c4_inference_loop():
    reg = Registry().register(comet_spec(), MockBackend())
    conv = Conversation("c", (Message.user("Hi, how are you?"), Message.assistant("I'm fine. How about you?"),
                              Message.user("I was surprised when my mom bought me a car")), "surprised")

    def check(script, cap, roles, queries):
        model = MockLLM.sequence(script)
        text, trace = respond(conv, model, reg, InferencePolicy(max_tool_calls_per_turn=cap))
        got = [m.role for m in trace.messages]
        assert got == roles, f"{script[0][:20]!r}: roles {got}"
        assert trace.model_queries == queries == len(model.requests), f"queries {trace.model_queries}"
        assert validate(conv.append(*trace.messages)) == []
        for obs in trace.observations:
            assert obs == reg.invoke(TOOL_NAME, {"prompt": "I was surprised when my mom bought me a car"}).rendered
        return model, trace

    F, O, A = Role.FUNCTION_CALL, Role.OBSERVATION, Role.ASSISTANT
    check(["Wow, what a nice surprise!"], 1, [A], 1)
    check([CALL, "Wow, that's a lovely gift!"], 1, [F, O, A], 2)
    model, trace = check([CALL, CALL, CALL], 1, [F, O, A], 2)
    assert FORCE_DIRECT in model.requests[1].text() and trace.fell_back
    check([CALL, CALL, CALL, "ok"], 2, [F, O, F, O, A], 3)
    check([CALL, CALL, CALL, CALL], 0, [A], 1)
    return "direct 1 query, one call 2 queries, repeated calls capped at max+1"


@gate(5, "plug-and-play relation swap", 5.0)
def test_c5_swap():
    corpus = [Conversation(f"d{i}", (Message.user(f"hello {i}"), Message.assistant("hi"),
                                     Message.user(f"my dog {i} died"), Message.assistant("sorry")))
              for i in range(5)]
    script = [Rule("So sorry for your loss.", ("died", "-inference-")),
              Rule('Action: EmotionKnowledgebase\nAction Input: {"prompt": "my dog died"}', ("died",)),
              Rule("Hi there!")]
    outs = {}
    for name, spec in (("comet", comet_spec()), ("cicero", cicero_spec())):
        reg = Registry().register(spec, MockBackend())
        res = batch_infer(corpus, MockLLM(list(script)), reg)
        outs[name] = res
    a, b = outs["comet"].generations, outs["cicero"].generations
    assert [(g["dialogue_id"], g["turn"], g["response"], g["tool_used"]) for g in a] == \
        [(g["dialogue_id"], g["turn"], g["response"], g["tool_used"]) for g in b]
    conv = corpus[0]
    traces = {}
    for name, spec in (("comet", comet_spec()), ("cicero", cicero_spec())):
        reg = Registry().register(spec, MockBackend())
        _, t = respond(Conversation("x", conv.messages[:3]), MockLLM(list(script)), reg)
        traces[name] = t
    assert [m.role for m in traces["comet"].messages] == [m.role for m in traces["cicero"].messages]
    oc, oi = traces["comet"].observations[0], traces["cicero"].observations[0]
    assert oc != oi
    assert [line.split(":")[0] for line in oc.splitlines()] == ["xContent", "xNeed", "xWant", "xEffect", "xReact"]
    assert [line.split(":")[0] for line in oi.splitlines()] == ["Cause", "SubEv", "Motiv", "React"]
    return "identical role sequences and replies, observations differ (5 vs 4 relations)"


class _Prefers:
    def __init__(self, marker):
        self.marker = marker

    def complete(self, request):
        text = request.text()
        a = text.split("[Response A]\n", 1)[1].split("\n[End of Response A]", 1)[0]
        return "[[A]]" if self.marker in a else "[[B]]"


@gate(6, "A/B harness suite", 5.0)
def test_c6_ab():
    ctx = Conversation("c", (Message.user("I failed my driving test."),), "sad")
    items = [AbItem(f"i{k}", ctx, f"TOOL reply {k}", f"plain reply {k}", aspect)
             for k in range(50) for aspect in ("empathy", "consistency", "fluency")]
    biased = tally(run_ab(items, MockLLM([Rule("[[A]]")])))
    assert all(r.flagged == 50 and r.evaluated == 0 for r in biased), "position bias not fully flagged"
    fair = tally(run_ab(items, _Prefers("TOOL")))
    assert all((r.win_pct, r.lose_pct, r.flagged) == (100.0, 0.0, 0) for r in fair)
    table = render_tally(fair, "tool vs. base")
    lines = table.splitlines()
    assert lines[0].split()[:4] == ["Comparisons", "Aspects", "Win", "Lose"]
    assert [ln.split()[-5] for ln in lines[1:]] == ["Emp.", "Con.", "Flu."]
    assert lines[1].startswith("tool vs. base") and all("100%" in ln and "0%" in ln for ln in lines[1:])
    return "biased judge 100% flagged, A-favouring judge 100%/0%"


@gate(7, "split determinism", 5.0)
def test_c7_split():
    items = list(range(33_090))
    parts = split(items, (0.8, 0.1, 0.1), seed=13)
    sizes = tuple(map(len, parts))
    assert all(abs(s - e) <= 1 for s, e in zip(sizes, (26472, 3309, 3309))), f"sizes {sizes}"
    assert split(items, (0.8, 0.1, 0.1), seed=13) == parts
    assert sorted(x for p in parts for x in p) == items
    assert split_sizes(33_090, (0.8, 0.1, 0.1)) == list(sizes)
    return f"sizes {sizes}, identical on rerun"


@gate(8, "end-to-end smoke on mocks", 60.0)
def test_c8_e2e(tmp_path_factory):
    d = tmp_path_factory.mktemp("e2e")
    eds = make_ed(60, 3)
    goldens = [t for e in eds for r, t in e.turns if r == "assistant"]
    write_ed(d / "ed.jsonl", eds)
    mockscripts.dump(mockscripts.gate_judge(goldens[::4], goldens[1::4]), d / "judge.json")
    assert run(["datagen", "--input", str(d / "ed.jsonl"), "--output", str(d / "data"),
                "--judge", f"mock:{d / 'judge.json'}", "--seed", "0"]) == 0, "datagen failed"
    test_split = d / "data" / "test.jsonl"
    mockscripts.dump(mockscripts.echo_policy(read_corpus(test_split)), d / "policy.json")
    gens = d / "infer" / "generations.jsonl"
    assert run(["infer", "--corpus", str(test_split), "--model", f"mock:{d / 'policy.json'}",
                "--output", str(gens)]) == 0, "infer failed"
    report = d / "eval" / "report.json"
    assert run(["eval", "auto", "--generations", str(gens), "--golden", str(test_split),
                "--output", str(report)]) == 0, "eval auto failed"
    rep = json.loads(report.read_text())
    assert rep["n"] > 0 and len(rep["bleu"]) == 4 and set(rep["rouge"]) == {"r1", "r2", "rl"}
    assert set(rep["distinct"]) == {"d1", "d2"} and all(v > 0 for v in rep["distinct"].values())
    assert rep["bleu"][0] == 1.0 and rep["rouge"]["rl"] == 1.0, (rep["bleu"][0], rep["rouge"]["rl"])
    summary = json.loads(gens.with_suffix(".summary.json").read_text())
    assert summary["tool_turns"] > 0
    for sub in ("data", "infer", "eval"):
        assert (d / sub / "manifest.json").exists()
    return f"{rep['n']} turns, BLEU-1={rep['bleu'][0]:.1f} ROUGE-L={rep['rouge']['rl']:.1f}"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
