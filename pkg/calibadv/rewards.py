# calibadv/rewards.py
"""
Gated answer reward: token-level F1 against the reference answer, multiplied
by a binary format check over the agent's tag grammar.

Word normalization follows the usual QA evaluation recipe (lowercase, drop
punctuation and English articles, split on whitespace).
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Tuple

from .schemas import RewardBreakdown, RolloutGroup, RolloutTrace

DEFAULT_ARTICLES: FrozenSet[str] = frozenset({"a", "an", "the"})

TAGS = ("think", "search", "information", "answer")
_TAG_RE = re.compile(r"</?(think|search|information|answer)>")
_OPEN_RE = re.compile(r"<(think|search|information|answer)>")
_SHAPE_RE = re.compile(r"(TSI?)*TA")
_SHAPE_LETTER = {"think": "T", "search": "S", "information": "I", "answer": "A"}


@dataclass(frozen=True)
class WordBag:
    words: Tuple[str, ...] = ()
    counts: Counter = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", Counter(self.words))

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WordBag):
            return NotImplemented
        return self.counts == other.counts

    def __hash__(self) -> int:
        return hash(frozenset(self.counts.items()))


def _strip_punct(text: str) -> str:
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def normalize_words(text: str, *, articles: FrozenSet[str] = DEFAULT_ARTICLES) -> WordBag:
    # Articles are dropped after punctuation removal so "the." is also caught.
    tokens = _strip_punct((text or "").lower()).split()
    return WordBag(tuple(t for t in tokens if t not in articles))


def answer_f1(predicted: WordBag, reference: WordBag) -> float:
    overlap = sum((predicted.counts & reference.counts).values())
    if overlap == 0:
        return 0.0
    return 2.0 * overlap / (len(predicted) + len(reference))


def _blocks(raw: str) -> Optional[List[str]]:
    """Split a response into its top-level tag blocks, or None if it is not
    a clean sequence of non-nested blocks separated by whitespace."""
    out: List[str] = []
    pos = 0
    n = len(raw)
    while True:
        while pos < n and raw[pos].isspace():
            pos += 1
        if pos >= n:
            return out
        m = _OPEN_RE.match(raw, pos)
        if not m:
            return None
        tag = m.group(1)
        close = raw.find(f"</{tag}>", m.end())
        if close < 0:
            return None
        if _TAG_RE.search(raw, m.end(), close):
            return None
        out.append(tag)
        pos = close + len(tag) + 3


def check_format(raw_response: str) -> int:
    blocks = _blocks(raw_response or "")
    if not blocks:
        return 0
    shape = "".join(_SHAPE_LETTER[b] for b in blocks)
    return 1 if _SHAPE_RE.fullmatch(shape) else 0


def final_reward(trace: RolloutTrace, reference_answer: str) -> RewardBreakdown:
    if trace.has_final_answer:
        r_answer = answer_f1(normalize_words(trace.answer_text), normalize_words(reference_answer))
    else:
        r_answer = 0.0
    if trace.raw_response is not None:
        r_format = float(check_format(trace.raw_response))
    else:
        r_format = 1.0 if trace.has_final_answer else 0.0
    return RewardBreakdown.gated(r_answer, r_format)


def group_rewards(group: RolloutGroup) -> List[RewardBreakdown]:
    return [final_reward(r, group.reference_answer) for r in group.rollouts]
