"""Deterministic sentence segmentation and tokenization.

A single rule-based splitter/tokenizer is shared by the mention labeler,
the keyword tagger, and the text-generation metrics so that every stage
sees the same token stream.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import cached_property


class Section(str, Enum):
    """Report section a sentence was taken from."""

    FINDINGS = "findings"
    IMPRESSION = "impression"


@dataclass(frozen=True)
class Sentence:
    """One segmented sentence with its position inside the report.

    ``index`` counts sentences per report, findings first, then
    impression, starting at 0.  ``tokens`` are derived lazily from
    ``text`` via :func:`tokenize`, so untokenized stages pay nothing.
    """

    study_id: str
    section: Section
    index: int
    text: str

    @cached_property
    def tokens(self) -> tuple[str, ...]:
        return tuple(tokenize(self.text))

    @classmethod
    def make(cls, study_id: str, section: Section, index: int, text: str) -> "Sentence":
        return cls(study_id, section, index, text)


# Sentence boundaries: a run of terminal punctuation followed by
# whitespace or end of text.  Decimal points never qualify because a
# digit, not whitespace, follows them.
_BOUNDARY = re.compile(r"[.!?]+(?=\s|$)")
_TRAILING_WORD = re.compile(r"([A-Za-z][A-Za-z.]*)$")
_WS = re.compile(r"\s+")

# Periods after these never end a sentence.  "e.g"/"i.e" appear without
# their final dot because that dot is the boundary candidate itself.
_ABBREVIATIONS = frozenset({"dr", "mr", "e.g", "i.e", "vs"})


def split_sentences(section_text: str) -> list[str]:
    """Split section text into sentence strings.

    Splits at '.', '!', or '?' followed by whitespace or end of input,
    except when a '.' terminates a known abbreviation, a single-letter
    initial, or "No." introducing a number.  Casing is preserved;
    internal whitespace is collapsed to single spaces.
    """
    sentences: list[str] = []
    start = 0

    def flush(end: int) -> None:
        nonlocal start
        piece = _WS.sub(" ", section_text[start:end]).strip()
        if piece:
            sentences.append(piece)
        start = end

    for match in _BOUNDARY.finditer(section_text):
        if match.group() == ".":
            # A 16-char window is enough: truncating a longer word still
            # yields a multi-letter non-abbreviation, i.e. the same verdict.
            window_start = max(0, match.start() - 16)
            word_match = _TRAILING_WORD.search(section_text, window_start, match.start())
            word = word_match.group(1).lower() if word_match else ""
            if word in _ABBREVIATIONS or len(word) == 1:
                continue
            if word == "no":
                rest = section_text[match.end():].lstrip()
                if rest[:1].isdigit():
                    continue
        flush(match.end())
    flush(len(section_text))
    return sentences


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokenization with punctuation peeled off.

    Surrounding punctuation becomes separate single-character tokens;
    interior characters (hyphens, decimal points) are kept, so
    "right-sided" and "2.3" survive intact.
    """
    tokens: list[str] = []
    for chunk in text.lower().split():
        head: list[str] = []
        tail: list[str] = []
        while chunk and not chunk[0].isalnum():
            head.append(chunk[0])
            chunk = chunk[1:]
        while chunk and not chunk[-1].isalnum():
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(head)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(tail))
    return tokens
