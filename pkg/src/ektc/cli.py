"""``ektc`` command line: datagen, infer, chat, eval auto, eval ab, stats."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Sequence

from . import config as config_mod
from . import datagen, evalharness, inference, metrics
from .dialogue import Conversation, Message, Role, assistant_turns, from_ed_turns, read_corpus, write_corpus

log = logging.getLogger("ektc")


def _version(pkg: str) -> str:
    try:
        return metadata.version(pkg)
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(outdir: Path, args: argparse.Namespace, cfg: config_mod.Config, **extra) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": args.command + (f" {args.eval_command}" if getattr(args, "eval_command", None) else ""),
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)},
        "config": cfg.to_dict(),
        "versions": {"ektc": _version("ektc"), "python": platform.python_version(),
                     "httpx": _version("httpx"), "pyyaml": _version("pyyaml")},
        **extra,
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _jobs(args, cfg) -> int:
    return args.jobs or cfg.jobs or os.cpu_count() or 1


def _ratios(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split {text!r}, expected e.g. 0.8,0.1,0.1") from None


def _load_golden(path) -> list[Conversation]:
    """Tool-trace corpus records, or raw ED dialogues (detected by a ``turns`` field)."""
    with open(path, encoding="utf-8") as fh:
        first = next((line for line in fh if line.strip()), "")
    if first and "turns" in json.loads(first):
        return [from_ed_turns(d.id, d.emotion, [t for _, t in d.turns]) for d in datagen.read_ed(path)]
    return read_corpus(path)


def cmd_datagen(args, cfg) -> int:
    if args.full_context:
        cfg.datagen.full_context = True
    if args.split:
        cfg.datagen.split, cfg.datagen.split_preset = list(args.split), None
    if args.split_preset:
        cfg.datagen.split_preset = args.split_preset
    cfg.datagen.seed = args.seed
    cfg.validate()

    dialogues = datagen.read_ed(args.input)
    registry = cfg.registry(args.tool)
    tool_name = registry.specs()[0].name
    judge = cfg.model(args.judge)
    res = datagen.build(dialogues, registry, tool_name, judge, cfg.datagen_policy(_jobs(args, cfg)))

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(out / "tool_ed.jsonl", res.corpus)
    for name, part in zip(("train", "valid", "test"), datagen.split(res.corpus, cfg.split_ratios(), args.seed)):
        write_corpus(out / f"{name}.jsonl", part)
    with open(out / "provenance.jsonl", "w", encoding="utf-8") as fh:
        for p in res.provenance:
            fh.write(json.dumps(dataclasses.asdict(p)) + "\n")
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump({**res.stats.to_dict(), "failed": res.failed}, fh, indent=2)
        fh.write("\n")
    write_manifest(out, args, cfg, seed=args.seed)
    print(f"dialogues={res.stats.dialogues} assistant_turns={res.stats.assistant_turns} "
          f"tool_call_turns={res.stats.tool_call_turns} tool_call_ratio={res.stats.tool_call_ratio:.4f} "
          f"skipped={len(res.failed)}")
    return 0


def _apply_infer_flags(args, cfg) -> None:
    if args.max_calls is not None:
        cfg.inference.max_tool_calls_per_turn = args.max_calls
    cfg.validate()


def cmd_infer(args, cfg) -> int:
    _apply_infer_flags(args, cfg)
    corpus = read_corpus(args.corpus)
    model = cfg.model(args.model)
    res = inference.batch_infer(corpus, model, cfg.registry(args.tool), cfg.inference_policy(),
                                jobs=_jobs(args, cfg))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    inference.write_generations(out, res.generations)
    summary = res.summary()
    with open(out.with_suffix(".summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    write_manifest(out.parent, args, cfg)
    print(f"turns={res.turns} tool_turns={res.tool_turns} tool_ratio={res.tool_ratio:.4f} "
          f"failed_dialogues={len(res.failures)}")
    return 0


def cmd_chat(args, cfg) -> int:
    _apply_infer_flags(args, cfg)
    model = cfg.model(args.model)
    registry = cfg.registry(args.tool)
    policy = cfg.inference_policy()
    conv = Conversation("chat")
    stdin = args.stdin or sys.stdin
    while True:
        print("USER: ", end="", flush=True)
        line = stdin.readline()
        if not line or line.strip().lower() in ("exit", "quit"):
            print()
            return 0
        if not line.strip():
            continue
        conv = conv.append(Message.user(line.strip()))
        text, trace = inference.respond(conv, model, registry, policy)
        if args.show_observations:
            for m in trace.messages:
                if m.role is Role.FUNCTION_CALL:
                    print(m.content)
                elif m.role is Role.OBSERVATION:
                    print("Observation:\n" + m.content)
        print(f"ASSISTANT: {text}", flush=True)
        conv = conv.append(*trace.messages)


def cmd_eval_auto(args, cfg) -> int:
    gens = inference.read_generations(args.generations)
    report = metrics.evaluate(gens, _load_golden(args.golden))
    print(report.table(Path(args.generations).stem))
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        metrics.write_report(out, report)
        write_manifest(out.parent, args, cfg)
    return 0


def cmd_eval_ab(args, cfg) -> int:
    aspects = []
    for a in args.aspects.split(","):
        if a not in evalharness.ASPECTS:
            raise config_mod.ConfigError(f"unknown aspect {a!r}; use {','.join(evalharness.ASPECTS)}")
        aspects.append(evalharness.ASPECTS[a])
    gens_a = {(g["dialogue_id"], g["turn"]): g["response"] for g in inference.read_generations(args.a)}
    gens_b = {(g["dialogue_id"], g["turn"]): g["response"] for g in inference.read_generations(args.b)}
    contexts = {}
    for conv in _load_golden(args.golden):
        for t in assistant_turns(conv):
            contexts[(conv.id, t.index)] = t.context
    keys = [k for k in gens_a if k in gens_b and k in contexts]
    if not keys:
        raise config_mod.ConfigError("no (dialogue_id, turn) shared by both generation files and the golden corpus")
    chosen = evalharness.sample_keys(keys, args.sample, args.seed)
    items = [evalharness.AbItem(f"{d}#{t}", contexts[(d, t)], gens_a[(d, t)], gens_b[(d, t)], aspect)
             for (d, t) in chosen for aspect in aspects]
    verdicts = evalharness.run_ab(items, cfg.model(args.judge), jobs=_jobs(args, cfg))
    rows = evalharness.tally(verdicts, aspects)
    print(evalharness.render_tally(rows, f"{Path(args.a).stem} vs. {Path(args.b).stem}"))
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "verdicts.jsonl", "w", encoding="utf-8") as fh:
            for v in verdicts:
                fh.write(json.dumps(v.to_record()) + "\n")
        with open(out / "tally.json", "w", encoding="utf-8") as fh:
            json.dump([{**dataclasses.asdict(r), "win_pct": r.win_pct, "lose_pct": r.lose_pct} for r in rows],
                      fh, indent=2)
            fh.write("\n")
        write_manifest(out, args, cfg, seed=args.seed)
    return 0


def cmd_stats(args, cfg) -> int:
    stats = datagen.corpus_stats(read_corpus(args.corpus))
    print(json.dumps(stats.to_dict(), indent=2))
    print(f"tool_call_ratio: {stats.tool_call_ratio:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--jobs", type=int, help="parallel workers (default: logical cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ektc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, metavar="{datagen,infer,chat,eval,stats}")

    d = sub.add_parser("datagen", parents=[common], help="build a tool-trace corpus from ED dialogues")
    d.add_argument("--input", required=True, help="ED-format JSONL")
    d.add_argument("--output", required=True, help="output directory")
    d.add_argument("--tool", default="comet")
    d.add_argument("--judge", required=True, help="endpoint profile or mock:<script.json>")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--full-context", action="store_true", help="pass the whole context to the tool")
    d.add_argument("--split", type=_ratios, help="train,valid,test ratios (default 0.8,0.1,0.1)")
    d.add_argument("--split-preset", choices=sorted(datagen.SPLIT_PRESETS))
    d.set_defaults(func=cmd_datagen)

    i = sub.add_parser("infer", parents=[common], help="generate one reply per golden turn")
    i.add_argument("--corpus", required=True)
    i.add_argument("--model", required=True)
    i.add_argument("--tool", default="comet")
    i.add_argument("--max-calls", type=int)
    i.add_argument("--output", default="generations.jsonl")
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("chat", parents=[common], help="interactive session with the tool loop")
    c.add_argument("--model", required=True)
    c.add_argument("--tool", default="comet")
    c.add_argument("--max-calls", type=int)
    c.add_argument("--show-observations", action="store_true")
    c.set_defaults(func=cmd_chat, stdin=None)

    e = sub.add_parser("eval", help="automatic metrics or LLM A/B judging")
    esub = e.add_subparsers(dest="eval_command", required=True, metavar="{auto,ab}")
    ea = esub.add_parser("auto", parents=[common], help="BLEU / ROUGE / Distinct")
    ea.add_argument("--generations", required=True)
    ea.add_argument("--golden", required=True)
    ea.add_argument("--output", help="write the report as JSON here")
    ea.set_defaults(func=cmd_eval_auto)
    eb = esub.add_parser("ab", parents=[common], help="pairwise LLM judging")
    eb.add_argument("--a", required=True)
    eb.add_argument("--b", required=True)
    eb.add_argument("--golden", required=True)
    eb.add_argument("--aspects", default="emp,con,flu")
    eb.add_argument("--judge", required=True)
    eb.add_argument("--sample", type=int, default=100)
    eb.add_argument("--seed", type=int, default=1)
    eb.add_argument("--output", help="directory for verdicts.jsonl and tally.json")
    eb.set_defaults(func=cmd_eval_ab)

    s = sub.add_parser("stats", parents=[common], help="tool-call statistics of a corpus")
    s.add_argument("--corpus", required=True)
    s.set_defaults(func=cmd_stats)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load(args.config)
        return args.func(args, cfg)
    except Exception as exc:  # noqa: BLE001 - any failure is an operational error
        log.debug("failure", exc_info=True)
        print(f"ektc {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
