"""Pairwise LLM-judge evaluation with order flipping, and win/lose tallies."""
from __future__ import annotations

import logging
import random
import re
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

from . import prompts
from .dialogue import Conversation, _substitute, render_history
from .llm import ChatModel, ask

logger = logging.getLogger(__name__)

ASPECTS = OrderedDict([("emp", "empathy"), ("con", "consistency"), ("flu", "fluency")])
ASPECT_LABELS = {"empathy": "Emp.", "consistency": "Con.", "fluency": "Flu."}

_VERDICT = re.compile(r"\[\[\s*([AB])\s*\]\]", re.IGNORECASE)
_BARE = re.compile(r"^\s*(?:response\s+)?([AB])\b\s*[.!]?\s*$", re.IGNORECASE)


class JudgeUnparseable(ValueError):
    pass


@dataclass(frozen=True)
class AbItem:
    item_id: str
    context: Conversation
    response_a: str
    response_b: str
    aspect: str
    order_flipped: bool = False

    def __post_init__(self) -> None:
        if self.aspect not in ASPECT_LABELS:
            raise ValueError(f"unknown aspect {self.aspect!r}")


@dataclass(frozen=True)
class AbVerdict:
    winner: str  # "A" or "B", in the caller's labels
    raw: str


@dataclass(frozen=True)
class PairedVerdict:
    item_id: str
    aspect: str
    winner: str | None  # None when flagged
    flipped_agreement: bool | None  # None when a reply was unparseable

    def to_record(self) -> dict[str, Any]:
        return {"item_id": self.item_id, "aspect": self.aspect, "winner": self.winner,
                "flipped_agreement": self.flipped_agreement}


def extract_winner(reply: str) -> str:
    m = _VERDICT.search(reply) or _BARE.match(reply)
    if m is None:
        raise JudgeUnparseable(reply)
    return m.group(1).upper()


def judge_prompt(item: AbItem) -> str:
    first, second = (item.response_b, item.response_a) if item.order_flipped else (item.response_a, item.response_b)
    return _substitute(prompts.AB_JUDGE, {
        "definition": prompts.ASPECT_DEFINITIONS[item.aspect],
        "context": render_history(item.context.messages),
        "response_a": first, "response_b": second, "aspect": item.aspect,
    })


def ab_judge(item: AbItem, judge: ChatModel) -> AbVerdict:
    """One judgement; the presented position is mapped back to the caller's A/B."""
    reply = ask(judge, judge_prompt(item), temperature=0.0, max_tokens=64, endpoint="evaluator")
    presented = extract_winner(reply)
    if item.order_flipped:
        presented = "B" if presented == "A" else "A"
    return AbVerdict(presented, reply)


def judge_both_orders(item: AbItem, judge: ChatModel) -> PairedVerdict:
    """Judge in both presentation orders; a winner needs both to agree."""
    try:
        v1 = ab_judge(AbItem(item.item_id, item.context, item.response_a, item.response_b, item.aspect, False), judge)
        v2 = ab_judge(AbItem(item.item_id, item.context, item.response_a, item.response_b, item.aspect, True), judge)
    except JudgeUnparseable as exc:
        logger.warning("%s/%s: unparseable verdict %r", item.item_id, item.aspect, str(exc)[:60])
        return PairedVerdict(item.item_id, item.aspect, None, None)
    agree = v1.winner == v2.winner
    return PairedVerdict(item.item_id, item.aspect, v1.winner if agree else None, agree)


def run_ab(items: Sequence[AbItem], judge: ChatModel, jobs: int = 1) -> list[PairedVerdict]:
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(lambda it: judge_both_orders(it, judge), items))
    return [judge_both_orders(it, judge) for it in items]


@dataclass
class TallyRow:
    aspect: str
    wins: int
    losses: int
    flagged: int

    @property
    def evaluated(self) -> int:
        return self.wins + self.losses

    @property
    def win_pct(self) -> float | None:
        return 100.0 * self.wins / self.evaluated if self.evaluated else None

    @property
    def lose_pct(self) -> float | None:
        return 100.0 * self.losses / self.evaluated if self.evaluated else None


def tally(verdicts: Sequence[PairedVerdict | AbVerdict], aspects: Sequence[str] | None = None,
          item_aspects: Sequence[str] | None = None) -> list[TallyRow]:
    """Fold verdicts into per-aspect rows. A win means the caller's A won.

    Plain AbVerdicts carry no aspect; pass ``item_aspects`` alongside them.
    """
    rows: dict[str, TallyRow] = {}
    for a in aspects or ():
        rows[a] = TallyRow(a, 0, 0, 0)
    for i, v in enumerate(verdicts):
        aspect = v.aspect if isinstance(v, PairedVerdict) else item_aspects[i]
        row = rows.setdefault(aspect, TallyRow(aspect, 0, 0, 0))
        if v.winner == "A":
            row.wins += 1
        elif v.winner == "B":
            row.losses += 1
        else:
            row.flagged += 1
    return list(rows.values())


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{x:.0f}%" if float(x).is_integer() else f"{x:.1f}%"


def render_tally(rows: Sequence[TallyRow], comparison: str = "A vs. B") -> str:
    lines = [f"{'Comparisons':<24} {'Aspects':<8} {'Win':>6} {'Lose':>6}  {'n':>4} {'flagged':>7}"]
    for i, r in enumerate(rows):
        label = comparison if i == 0 else ""
        note = "" if r.evaluated else "  (0 evaluated)"
        lines.append(f"{label:<24} {ASPECT_LABELS.get(r.aspect, r.aspect):<8} {_pct(r.win_pct):>6} "
                     f"{_pct(r.lose_pct):>6}  {r.evaluated:>4} {r.flagged:>7}{note}")
    return "\n".join(lines)


def sample_keys(keys: Sequence[Any], n: int, seed: int) -> list[Any]:
    keys = sorted(keys)
    if n >= len(keys):
        return keys
    return sorted(random.Random(seed).sample(keys, n))
