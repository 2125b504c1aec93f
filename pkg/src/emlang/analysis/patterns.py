"""Surface-structure mining over message corpora.

Messages tend to commit their strongest class signal to the first and
last positions, so rules take the form (first symbol, anything, last
symbol). A rule's correspondence rate is the fraction of matching
messages whose paired image satisfies a semantic predicate.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..nets import Message, Vocabulary


class UndefinedRateError(ValueError):
    """A correspondence rate was requested for a rule matching nothing."""


@dataclass(frozen=True)
class PatternRule:
    """First/last symbol pair with a wildcard interior, e.g. 'N***C'."""

    first_symbol: str
    last_symbol: str

    def __post_init__(self):
        for ch in (self.first_symbol, self.last_symbol):
            if len(ch) != 1:
                raise ValueError(f"pattern symbols are single characters, got {ch!r}")

    def matches(self, message: Message, vocab: Vocabulary) -> bool:
        text = vocab.decode(message.symbols)
        return text[0] == self.first_symbol and text[-1] == self.last_symbol

    def display(self, length: int = 5) -> str:
        return self.first_symbol + "*" * max(0, length - 2) + self.last_symbol


@dataclass(frozen=True)
class CorrespondenceStat:
    pattern: PatternRule
    feature_tag: str
    total: int
    cr: float

    def __post_init__(self):
        if self.total <= 0:
            raise UndefinedRateError("correspondence rate needs at least one match")
        if not (0.0 <= self.cr <= 1.0):
            raise ValueError(f"cr must lie in [0, 1], got {self.cr}")


def mine_patterns(
    messages: Sequence[Message], vocab: Vocabulary, min_support: int = 1
) -> list[tuple[PatternRule, int]]:
    """All (first, last) symbol rules with support >= min_support.

    Sorted by support descending, then alphabetically for determinism.
    """
    if not messages:
        raise ValueError("cannot mine an empty corpus")
    counts: Counter[tuple[str, str]] = Counter()
    for msg in messages:
        text = vocab.decode(msg.symbols)
        counts[(text[0], text[-1])] += 1
    rules = [
        (PatternRule(first, last), n)
        for (first, last), n in counts.items()
        if n >= min_support
    ]
    rules.sort(key=lambda item: (-item[1], item[0].first_symbol, item[0].last_symbol))
    return rules


def correspondence_rate(
    rule: PatternRule,
    messages: Sequence[Message],
    images: Sequence[np.ndarray],
    predicate: Callable[[np.ndarray], bool],
    vocab: Vocabulary,
    feature_tag: str = "",
) -> CorrespondenceStat:
    """cr = |matched messages whose image satisfies predicate| / |matched|."""
    if len(messages) != len(images):
        raise ValueError(f"{len(messages)} messages but {len(images)} images")
    matched = [i for i, m in enumerate(messages) if rule.matches(m, vocab)]
    if not matched:
        raise UndefinedRateError(f"rule {rule.display()} matches no message")
    satisfying = sum(1 for i in matched if predicate(images[i]))
    return CorrespondenceStat(
        pattern=rule,
        feature_tag=feature_tag,
        total=len(matched),
        cr=satisfying / len(matched),
    )
