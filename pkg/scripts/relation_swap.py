"""Replay one scripted conversation against both relation sets and diff the traces.

The role sequence and replies should match; only the observation text changes.
"""
import argparse

from ektc.dialogue import Conversation, Message, render_history
from ektc.inference import respond
from ektc.llm import MockLLM, Rule
from ektc.tools import default_registry


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--utterance", default="I was surprised when my mom bought me a car")
    ap.add_argument("--k", type=int, default=2)
    args = ap.parse_args()

    conv = Conversation("swap", (Message.user(args.utterance),))
    script = [Rule("Wow, what a lovely surprise! What kind of car?", ("-inference-",)),
              Rule(f'Action: EmotionKnowledgebase\nAction Input: {{"prompt": "{args.utterance}"}}')]
    roles = {}
    for relations in ("comet", "cicero"):
        reg = default_registry(relations, k=args.k)
        _, trace = respond(conv, MockLLM(list(script)), reg)
        roles[relations] = [m.role.value for m in trace.messages]
        print(f"== {relations}")
        print(render_history(trace.messages))
        print()
    print("role sequences match:", roles["comet"] == roles["cicero"])


if __name__ == "__main__":
    main()
