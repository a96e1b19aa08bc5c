"""Explanation-keyword tagging and the sentence exclusion filters.

Matching is raw substring over the lowercased sentence, not token
aligned, because several shipped filter entries are stems ("deteriorat",
"imag") and one keeps a deliberate leading space (" position", so that
"supposition" stays untouched).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

from .segment import Sentence

EXPLANATION_PHRASES: tuple[str, ...] = (
    "indicate",
    "suggest",
    "concerning for",
    "compatible with",
    "account",
    "due",
    "reflect",
    "relate",
    "potentially",
    "likely represent",
    "suspicious for",
    "worrisome for",
    "consistent with",
    "may represent",
)

EXEMPTION_PHRASES: tuple[str, ...] = (
    "suggestion",
    "is suggested",
    "correlate",
)

HISTORY_KEYWORDS: tuple[str, ...] = (
    "prior",
    "compare",
    "change",
    "deteriorat",
    "increase",
    "decrease",
    "previous",
    "patient",
)

RECOMMENDATION_KEYWORDS: tuple[str, ...] = (
    "recommend",
    "perform",
    "follow",
)

TECHNICAL_KEYWORDS: tuple[str, ...] = (
    "ct",
    "technique",
    " position",
    "exam",
    "assess",
    "view",
    "imag",
)

EXTRA_EXCLUDED_KEYWORDS: tuple[str, ...] = ("finding",)


class FilterReason(str, Enum):
    """Why a sentence is excluded from NLE extraction."""

    ANONYMIZED = "anonymized"
    PATIENT_HISTORY = "patient_history"
    RECOMMENDATION = "recommendation"
    TECHNICAL = "technical"
    FINDING_WORD = "finding_word"


def _substring_re(phrases: tuple[str, ...]) -> re.Pattern[str] | None:
    if not phrases:
        return None
    ordered = sorted(set(phrases), key=lambda p: (-len(p), p))
    return re.compile("|".join(re.escape(p) for p in ordered))


@dataclass(frozen=True)
class KeywordLexicon:
    """All keyword lists used by the tagger and filters, lowercase."""

    explanation: tuple[str, ...] = EXPLANATION_PHRASES
    exemptions: tuple[str, ...] = EXEMPTION_PHRASES
    history: tuple[str, ...] = HISTORY_KEYWORDS
    recommendations: tuple[str, ...] = RECOMMENDATION_KEYWORDS
    technical: tuple[str, ...] = TECHNICAL_KEYWORDS
    extra_excluded: tuple[str, ...] = EXTRA_EXCLUDED_KEYWORDS

    def __post_init__(self) -> None:
        for name in ("explanation", "exemptions", "history", "recommendations",
                     "technical", "extra_excluded"):
            for phrase in getattr(self, name):
                if phrase != phrase.lower():
                    raise ValueError(f"{name} phrase not lowercase: {phrase!r}")
        for exemption in self.exemptions:
            if not any(phrase in exemption for phrase in self.explanation):
                raise ValueError(
                    f"exemption {exemption!r} contains no explanation phrase"
                )

    @cached_property
    def _explanation_re(self) -> re.Pattern[str] | None:
        return _substring_re(self.explanation)

    @cached_property
    def _exemption_re(self) -> re.Pattern[str] | None:
        return _substring_re(self.exemptions)

    @cached_property
    def _filter_res(self) -> tuple[tuple[FilterReason, re.Pattern[str] | None], ...]:
        return (
            (FilterReason.PATIENT_HISTORY, _substring_re(self.history)),
            (FilterReason.RECOMMENDATION, _substring_re(self.recommendations)),
            (FilterReason.TECHNICAL, _substring_re(self.technical)),
            (FilterReason.FINDING_WORD, _substring_re(self.extra_excluded)),
        )

    @cached_property
    def _any_filter_re(self) -> re.Pattern[str] | None:
        # one combined scan lets clean sentences skip the per-category
        # cascade; category precedence still decided by _filter_res order
        return _substring_re(
            self.history + self.recommendations + self.technical + self.extra_excluded
        )


def default_lexicon() -> KeywordLexicon:
    """The shipped keyword lists."""
    return KeywordLexicon()


@dataclass(frozen=True)
class TagResult:
    """Explanation matches plus the first applicable filter reason."""

    explanation_matches: tuple[tuple[str, int], ...]
    filter_reason: FilterReason | None

    @property
    def has_explanation_kw(self) -> bool:
        return bool(self.explanation_matches)


def tag_explanation(sentence: Sentence, lexicon: KeywordLexicon) -> list[tuple[str, int]]:
    """All (phrase, offset) explanation matches, offset order.

    A match lying inside an occurrence of any exemption phrase is
    discarded, so "suggestion of edema" carries no keyword.
    """
    return _tag_explanation(sentence.text.lower(), lexicon)


def _tag_explanation(low: str, lexicon: KeywordLexicon) -> list[tuple[str, int]]:
    pattern = lexicon._explanation_re
    if pattern is None:
        return []
    matches = [(m.start(), m.end(), m.group()) for m in pattern.finditer(low)]
    if not matches:
        return []
    exemption_re = lexicon._exemption_re
    if exemption_re is not None:
        spans = [(m.start(), m.end()) for m in exemption_re.finditer(low)]
        if spans:
            matches = [
                (start, end, phrase)
                for start, end, phrase in matches
                if not any(s <= start and end <= e for s, e in spans)
            ]
    return [(phrase, start) for start, end, phrase in matches]


def classify_filter(sentence: Sentence, lexicon: KeywordLexicon) -> FilterReason | None:
    """First exclusion reason, or None for a clean sentence.

    Precedence is fixed: anonymized (any underscore) first, then
    patient history, recommendations, technical, and the bare
    "finding" keyword.
    """
    return _classify_filter(sentence.text.lower(), lexicon)


def _classify_filter(low: str, lexicon: KeywordLexicon) -> FilterReason | None:
    if "_" in low:
        return FilterReason.ANONYMIZED
    combined = lexicon._any_filter_re
    if combined is None or not combined.search(low):
        return None
    for reason, pattern in lexicon._filter_res:
        if pattern is not None and pattern.search(low):
            return reason
    return None


def tag_sentence(sentence: Sentence, lexicon: KeywordLexicon) -> TagResult:
    """Combined tagging pass used by the extraction pipeline."""
    low = sentence.text.lower()
    return TagResult(
        explanation_matches=tuple(_tag_explanation(low, lexicon)),
        filter_reason=_classify_filter(low, lexicon),
    )
