"""BLEU-n, ROUGE-1/2/L and Distinct-n over a pinned tokenizer."""
from __future__ import annotations

import json
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Sequence

from .dialogue import Conversation, EmptyCorpus, assistant_turns

PUNCT = frozenset(string.punctuation)
SMOOTH_EPSILON = 1e-9

TokenSeq = Sequence[str]


class MetricError(ValueError):
    pass


class LengthMismatch(MetricError):
    pass


class EmptyReference(MetricError):
    pass


class NoNgrams(MetricError):
    pass


class JoinFailure(MetricError):
    def __init__(self, missing: Sequence[tuple[str, int]]):
        self.missing = list(missing)
        super().__init__(f"{len(self.missing)} generations have no golden turn: {self.missing[:5]}")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, peel leading/trailing punctuation off as single-char tokens."""
    out: list[str] = []
    for word in text.lower().split():
        i, j = 0, len(word)
        while i < j and word[i] in PUNCT:
            i += 1
        while j > i and word[j - 1] in PUNCT:
            j -= 1
        out.extend(word[:i])
        if i < j:
            out.append(word[i:j])
        out.extend(word[j:])
    return out


def ngrams(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_pairs(candidates, references) -> None:
    if len(candidates) != len(references):
        raise LengthMismatch(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise EmptyCorpus("no candidate/reference pairs")


def bleu(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq], n: int = 4,
         smooth: bool = True) -> float:
    """Corpus BLEU-n with uniform weights and a single reference per candidate.

    With ``smooth``, a zero clipped count at order >= 2 becomes epsilon.
    """
    if n not in (1, 2, 3, 4):
        raise ValueError("n must be 1..4")
    _check_pairs(candidates, references)
    matched = [0] * n
    total = [0] * n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for k in range(1, n + 1):
            cg, rg = ngrams(cand, k), ngrams(ref, k)
            matched[k - 1] += sum(min(c, rg[g]) for g, c in cg.items())
            total[k - 1] += sum(cg.values())
    if c_len == 0:
        return 0.0
    log_p = 0.0
    for k in range(n):
        if total[k] == 0:
            return 0.0
        m = matched[k]
        if m == 0:
            if not smooth or k == 0:
                return 0.0
            m = SMOOTH_EPSILON
        log_p += math.log(m / total[k]) / n
    bp = 1.0 if c_len >= r_len else math.exp(1 - r_len / c_len)
    return bp * math.exp(log_p)


def sentence_bleu(candidate: TokenSeq, reference: TokenSeq, n: int = 4, smooth: bool = False) -> float:
    return bleu([candidate], [reference], n, smooth)


def _f1(overlap: int, c_total: int, r_total: int) -> float:
    if overlap == 0 or c_total == 0 or r_total == 0:
        return 0.0
    p, r = overlap / c_total, overlap / r_total
    return 2 * p * r / (p + r)


def lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge(candidate: TokenSeq, reference: TokenSeq, variant: str = "rl") -> float:
    """ROUGE F1 (beta = 1) for one pair; variant is r1, r2 or rl."""
    if not reference:
        raise EmptyReference("reference is empty")
    variant = variant.lower()
    if variant == "rl":
        return _f1(lcs_length(candidate, reference), len(candidate), len(reference))
    if variant not in ("r1", "r2"):
        raise ValueError(f"unknown ROUGE variant {variant!r}")
    n = int(variant[1])
    cg, rg = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum(min(c, rg[g]) for g, c in cg.items())
    return _f1(overlap, sum(cg.values()), sum(rg.values()))


def corpus_rouge(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq], variant: str = "rl") -> float:
    _check_pairs(candidates, references)
    return sum(rouge(c, r, variant) for c, r in zip(candidates, references)) / len(candidates)


def distinct(responses: Sequence[TokenSeq], n: int = 1) -> float:
    grams: Counter = Counter()
    for r in responses:
        grams.update(ngrams(r, n))
    total = sum(grams.values())
    if total == 0:
        raise NoNgrams(f"no {n}-grams in {len(responses)} responses")
    return len(grams) / total


@dataclass
class MetricReport:
    bleu: list[float]
    rouge: dict[str, float]
    distinct: dict[str, float]
    n: int
    bleu_sentence: list[float] = field(default_factory=list)
    bertscore: Any = None
    meta: dict[str, Any] = field(default_factory=dict)

    COLUMNS = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROU-1", "ROU-2", "ROU-L", "Dist-1", "Dist-2")

    def row(self) -> list[float]:
        return [*self.bleu, self.rouge["r1"], self.rouge["r2"], self.rouge["rl"],
                self.distinct["d1"], self.distinct["d2"]]

    def to_dict(self) -> dict[str, Any]:
        return {"n": self.n, "bleu": self.bleu, "bleu_sentence": self.bleu_sentence, "rouge": self.rouge,
                "distinct": self.distinct, "bertscore": self.bertscore, "meta": self.meta}

    def table(self, model: str = "model") -> str:
        width = max(len(model), 5)
        head = f"{'Model':<{width}}  " + "  ".join(f"{c:>7}" for c in self.COLUMNS)
        line = f"{model:<{width}}  " + "  ".join(f"{v:>7.4f}" for v in self.row())
        return head + "\n" + line


def score(candidates: Sequence[str], references: Sequence[str]) -> MetricReport:
    """All automatic metrics for paired response strings."""
    cands = [tokenize(c) for c in candidates]
    refs = [tokenize(r) for r in references]
    _check_pairs(cands, refs)

    def safe_distinct(n: int) -> float:
        try:
            return distinct(cands, n)
        except NoNgrams:
            return 0.0

    return MetricReport(
        bleu=[bleu(cands, refs, k) for k in range(1, 5)],
        bleu_sentence=[sum(sentence_bleu(c, r, k) for c, r in zip(cands, refs)) / len(cands)
                       for k in range(1, 5)],
        rouge={v: corpus_rouge(cands, refs, v) for v in ("r1", "r2", "rl")},
        distinct={"d1": safe_distinct(1), "d2": safe_distinct(2)},
        n=len(cands),
        bertscore=None,
        meta={
            "tokenizer": "lowercase, whitespace split, edge punctuation split",
            "bleu_smoothing": f"corpus: epsilon={SMOOTH_EPSILON} on zero orders >= 2; sentence: none",
            "rouge": "F1, beta=1, mean over pairs",
            "bertscore": "not computed: needs pretrained embeddings",
        },
    )


def golden_turns(corpus: Sequence[Conversation]) -> dict[tuple[str, int], str]:
    return {(c.id, t.index): t.golden for c in corpus for t in assistant_turns(c)}


def evaluate(generations: Sequence[dict[str, Any]], golden: Sequence[Conversation]) -> MetricReport:
    """Join generations to golden turns by (dialogue_id, turn) and score them."""
    if not generations:
        raise EmptyCorpus("generations file is empty")
    gold = golden_turns(golden)
    missing = [(g["dialogue_id"], g["turn"]) for g in generations if (g["dialogue_id"], g["turn"]) not in gold]
    if missing:
        raise JoinFailure(missing)
    refs = [gold[(g["dialogue_id"], g["turn"])] for g in generations]
    return score([g["response"] for g in generations], refs)


def write_report(path, report: MetricReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
