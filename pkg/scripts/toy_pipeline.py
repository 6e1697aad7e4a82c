"""Run datagen -> infer -> eval auto -> eval ab end to end on a synthetic corpus.

Everything runs offline: judges and the policy model are scripted mocks and the
knowledge tool uses the deterministic mock backend. Useful as a smoke test and
as a template for wiring real endpoints.

    python3 scripts/toy_pipeline.py --out runs/toy --dialogues 200 --pass-rate 0.26
"""
import argparse
import json
import random
from pathlib import Path

from ektc import mockscripts
from ektc.cli import run
from ektc.datagen import EdDialogue, write_ed
from ektc.dialogue import EMOTION_LABELS, read_corpus

OPENERS = ["I just found out", "Yesterday I realised", "My sister told me", "Last week I learned",
           "I can't believe", "This morning I heard"]
EVENTS = ["my dog is sick", "I got the promotion", "the house was broken into", "my exam went badly",
          "an old friend called", "my car broke down", "we are having a baby", "the trip got cancelled"]
REPLIES = ["Oh no, that sounds hard.", "That is wonderful news!", "How are you holding up?",
           "I'm so sorry to hear that.", "You must be thrilled.", "What happened next?"]


def synth_ed(n, turns, seed):
    rng = random.Random(seed)
    out = []
    for i in range(n):
        utts = []
        for t in range(turns):
            utts.append(("user", f"{rng.choice(OPENERS)} {rng.choice(EVENTS)} ({i}.{t})."))
            utts.append(("assistant", f"{rng.choice(REPLIES)} [{i}.{t}]"))
        out.append(EdDialogue(f"toy{i}", rng.choice(EMOTION_LABELS), tuple(utts)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--dialogues", type=int, default=200)
    ap.add_argument("--turns", type=int, default=3)
    ap.add_argument("--pass-rate", type=float, default=0.26, help="share of turns both judges accept")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eds = synth_ed(args.dialogues, args.turns, args.seed)
    write_ed(out / "ed.jsonl", eds)

    rng = random.Random(args.seed)
    goldens = [t for d in eds for r, t in d.turns if r == "assistant"]
    rng.shuffle(goldens)
    k = round(args.pass_rate * len(goldens))
    mockscripts.dump(mockscripts.gate_judge(goldens[:k], goldens[k:k + k // 2]), out / "judge.json")

    def step(*argv):
        print("$ ektc " + " ".join(argv))
        code = run(list(argv))
        if code:
            raise SystemExit(code)

    step("datagen", "--input", str(out / "ed.jsonl"), "--output", str(out / "data"),
         "--judge", f"mock:{out / 'judge.json'}", "--seed", str(args.seed))
    test = out / "data" / "test.jsonl"

    # the "tool" policy replays golden replies, the baseline never calls the tool and says one thing
    mockscripts.dump(mockscripts.echo_policy(read_corpus(test)), out / "policy.json")
    mockscripts.dump({"rules": [{"reply": "I see. Tell me more."}]}, out / "baseline.json")
    step("infer", "--corpus", str(test), "--model", f"mock:{out / 'policy.json'}",
         "--output", str(out / "infer" / "tool.jsonl"))
    step("infer", "--corpus", str(test), "--model", f"mock:{out / 'baseline.json'}",
         "--output", str(out / "infer" / "baseline.jsonl"))
    step("eval", "auto", "--generations", str(out / "infer" / "tool.jsonl"), "--golden", str(test),
         "--output", str(out / "eval" / "tool.json"))
    step("eval", "auto", "--generations", str(out / "infer" / "baseline.jsonl"), "--golden", str(test),
         "--output", str(out / "eval" / "baseline.json"))

    # a judge that always picks the first slot: every item should come back flagged
    mockscripts.dump({"rules": [{"reply": "[[A]]"}]}, out / "ab_judge.json")
    step("eval", "ab", "--a", str(out / "infer" / "tool.jsonl"), "--b", str(out / "infer" / "baseline.jsonl"),
         "--golden", str(test), "--judge", f"mock:{out / 'ab_judge.json'}", "--sample", "20",
         "--output", str(out / "ab"))
    stats = json.loads((out / "data" / "stats.json").read_text())
    print(f"tool_call_ratio {stats['tool_call_ratio']:.4f} (target {args.pass_rate})")


if __name__ == "__main__":
    main()
