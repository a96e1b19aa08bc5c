"""The 14-label chest X-ray space and per-sentence mention labeling.

Two interchangeable labelers produce a :class:`LabelState` for each
sentence: a built-in deterministic pattern labeler driven by a
:class:`MentionLexicon`, and an external labeler that replays a
precomputed per-sentence label CSV.  Both sit behind the same callable
interface (``labeler(sentence) -> LabelState``).
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

from .segment import Sentence


class Label(IntEnum):
    """Closed label enumeration with stable integer codes."""

    ENLARGED_CARDIOMEDIASTINUM = 0
    CARDIOMEGALY = 1
    LUNG_OPACITY = 2
    LUNG_LESION = 3
    EDEMA = 4
    CONSOLIDATION = 5
    PNEUMONIA = 6
    ATELECTASIS = 7
    PNEUMOTHORAX = 8
    PLEURAL_EFFUSION = 9
    PLEURAL_OTHER = 10
    FRACTURE = 11
    SUPPORT_DEVICES = 12
    NO_FINDING = 13

    @property
    def display(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def from_display(cls, name: str) -> "Label":
        try:
            return _BY_DISPLAY[name]
        except KeyError:
            raise ValueError(f"unknown label name: {name!r}") from None


_DISPLAY_NAMES: dict[Label, str] = {
    Label.ENLARGED_CARDIOMEDIASTINUM: "Enlarged Cardiomediastinum",
    Label.CARDIOMEGALY: "Cardiomegaly",
    Label.LUNG_OPACITY: "Lung Opacity",
    Label.LUNG_LESION: "Lung Lesion",
    Label.EDEMA: "Edema",
    Label.CONSOLIDATION: "Consolidation",
    Label.PNEUMONIA: "Pneumonia",
    Label.ATELECTASIS: "Atelectasis",
    Label.PNEUMOTHORAX: "Pneumothorax",
    Label.PLEURAL_EFFUSION: "Pleural Effusion",
    Label.PLEURAL_OTHER: "Pleural Other",
    Label.FRACTURE: "Fracture",
    Label.SUPPORT_DEVICES: "Support Devices",
    Label.NO_FINDING: "No Finding",
}
_BY_DISPLAY = {name: label for label, name in _DISPLAY_NAMES.items()}

#: All labels except No Finding, in code order.
SUBSTANTIVE_LABELS: tuple[Label, ...] = tuple(
    label for label in Label if label is not Label.NO_FINDING
)


class Certainty(str, Enum):
    """Per-mention state; Absent means the label is not mentioned."""

    ABSENT = "absent"
    NEGATIVE = "negative"
    UNCERTAIN = "uncertain"
    POSITIVE = "positive"

    @property
    def present(self) -> bool:
        return self in (Certainty.UNCERTAIN, Certainty.POSITIVE)


@dataclass(frozen=True)
class LabelState:
    """Total assignment of a certainty to each of the 14 labels."""

    states: tuple[Certainty, ...]

    def __post_init__(self) -> None:
        if len(self.states) != len(Label):
            raise ValueError(f"LabelState needs {len(Label)} entries, got {len(self.states)}")

    def __getitem__(self, label: Label) -> Certainty:
        return self.states[label]

    @classmethod
    def from_dict(cls, mapping: Mapping[Label, Certainty]) -> "LabelState":
        return cls(tuple(mapping.get(label, Certainty.ABSENT) for label in Label))

    @property
    def present_set(self) -> frozenset[Label]:
        """Labels mentioned as Uncertain or Positive."""
        return frozenset(label for label in Label if self.states[label].present)

    def substantive_present(self) -> dict[Label, Certainty]:
        """Uncertain/Positive assignments over the 13 substantive labels."""
        return {
            label: self.states[label]
            for label in SUBSTANTIVE_LABELS
            if self.states[label].present
        }


ALL_ABSENT = LabelState(tuple(Certainty.ABSENT for _ in Label))


def _alternation(phrases: Iterable[str], word_bounded: bool) -> re.Pattern[str] | None:
    """One compiled alternation; longest phrase wins at a given offset."""
    ordered = sorted(set(phrases), key=lambda p: (-len(p), p))
    if not ordered:
        return None
    body = "|".join(re.escape(p) for p in ordered)
    if word_bounded:
        return re.compile(r"\b(?:" + body + r")\b")
    return re.compile(body)


@dataclass(frozen=True)
class MentionLexicon:
    """Phrase lists driving the built-in labeler.

    All phrases are lowercase.  Label phrases match as whole-word
    sequences (list both "opacity" and "opacities" rather than relying
    on stems); negation and uncertainty cues likewise, so "no" cannot
    fire inside "nodule".
    """

    phrases: Mapping[Label, tuple[str, ...]]
    negation_cues: tuple[str, ...]
    uncertainty_cues: tuple[str, ...]

    def __post_init__(self) -> None:
        seen: dict[str, Label] = {}
        for label, plist in self.phrases.items():
            for phrase in plist:
                if phrase != phrase.lower():
                    raise ValueError(f"lexicon phrase not lowercase: {phrase!r}")
                if phrase in seen and seen[phrase] is not label:
                    raise ValueError(f"phrase {phrase!r} assigned to two labels")
                seen[phrase] = label

    @cached_property
    def _phrase_re(self) -> re.Pattern[str] | None:
        return _alternation(
            (p for plist in self.phrases.values() for p in plist), word_bounded=True
        )

    @cached_property
    def _label_by_phrase(self) -> dict[str, Label]:
        return {p: label for label, plist in self.phrases.items() for p in plist}

    @cached_property
    def _negation_re(self) -> re.Pattern[str] | None:
        return _alternation(self.negation_cues, word_bounded=True)

    @cached_property
    def _uncertainty_re(self) -> re.Pattern[str] | None:
        return _alternation(self.uncertainty_cues, word_bounded=True)


_DEFAULT_PHRASES: dict[Label, tuple[str, ...]] = {
    Label.ENLARGED_CARDIOMEDIASTINUM: (
        "enlarged cardiomediastinum",
        "widened cardiomediastinum",
        "cardiomediastinal enlargement",
        "enlarged cardiomediastinal silhouette",
        "cardiomediastinal silhouette is enlarged",
        "widened mediastinum",
        "mediastinal widening",
        "mediastinum is widened",
    ),
    Label.CARDIOMEGALY: (
        "cardiomegaly",
        "enlarged heart",
        "heart is enlarged",
        "cardiac enlargement",
        "enlarged cardiac silhouette",
        "heart size is enlarged",
    ),
    Label.LUNG_OPACITY: (
        "opacity",
        "opacities",
        "opacification",
        "opacifications",
        "airspace disease",
        "air space disease",
        "infiltrate",
        "infiltrates",
        "infiltration",
        "haziness",
        "density",
        "densities",
    ),
    Label.LUNG_LESION: (
        "nodule",
        "nodules",
        "nodular opacity",
        "mass",
        "masses",
        "lung lesion",
        "cavitary lesion",
    ),
    Label.EDEMA: (
        "edema",
        "vascular congestion",
        "pulmonary congestion",
        "vascular prominence",
    ),
    Label.CONSOLIDATION: (
        "consolidation",
        "consolidations",
        "consolidative",
    ),
    Label.PNEUMONIA: (
        "pneumonia",
        "pneumonias",
        "infection",
        "infectious process",
    ),
    Label.ATELECTASIS: (
        "atelectasis",
        "atelectases",
        "atelectatic",
        "collapse",
        "collapsed",
    ),
    Label.PNEUMOTHORAX: (
        "pneumothorax",
        "pneumothoraces",
        "pneumothoraxes",
    ),
    Label.PLEURAL_EFFUSION: (
        "effusion",
        "effusions",
        "pleural fluid",
    ),
    Label.PLEURAL_OTHER: (
        "pleural thickening",
        "pleural scarring",
        "pleural abnormality",
        "fibrothorax",
    ),
    Label.FRACTURE: (
        "fracture",
        "fractures",
        "fractured",
    ),
    Label.SUPPORT_DEVICES: (
        "tube",
        "tubes",
        "catheter",
        "catheters",
        "pacemaker",
        "picc",
        "central line",
        "endotracheal tube",
        "tracheostomy",
        "sternotomy wires",
        "stent",
        "device",
        "devices",
    ),
    Label.NO_FINDING: (
        "no acute cardiopulmonary process",
        "no acute cardiopulmonary abnormality",
        "no acute intrathoracic process",
        "no acute findings",
        "lungs are clear",
        "clear lungs",
        "normal chest",
        "unremarkable chest",
    ),
}

_DEFAULT_NEGATION = (
    "no",
    "without",
    "free of",
    "clear of",
    "resolved",
    "negative for",
    "rather than",
)

_DEFAULT_UNCERTAINTY = (
    "may",
    "might",
    "possible",
    "possibly",
    "question",
    "cannot exclude",
    "cannot be excluded",
    "likely",
    "suspected",
    "suspicious",
    "concerning",
    "borderline",
    "versus",
    "vs",
)


def default_mention_lexicon() -> MentionLexicon:
    """The shipped deterministic approximation of a clinical labeler."""
    return MentionLexicon(
        phrases=dict(_DEFAULT_PHRASES),
        negation_cues=_DEFAULT_NEGATION,
        uncertainty_cues=_DEFAULT_UNCERTAINTY,
    )


# Clause boundaries for negation/uncertainty scoping.
_CLAUSE_BOUNDARY = re.compile(r"[,;]|\b(?:but|however)\b")
_OR_GAP = re.compile(r"\s*,?\s*or\s+")

_CERTAINTY_RANK = {
    Certainty.NEGATIVE: 0,
    Certainty.UNCERTAIN: 1,
    Certainty.POSITIVE: 2,
}


def label_sentence(sentence: Sentence, lexicon: MentionLexicon) -> LabelState:
    """Assign a certainty to every label for one sentence.

    Certainty is resolved per mention inside its clause (clauses split
    at commas, semicolons, "but", "however"): a preceding negation cue
    makes it Negative; otherwise a preceding uncertainty cue, or an
    "or"-coordination with a different label's mention, makes it
    Uncertain; otherwise Positive.  A label mentioned several times
    keeps its most-present certainty.  No Finding turns Positive only
    when one of its phrases matches and nothing substantive is present.
    """
    return label_text(sentence.text, lexicon)


def label_text(text: str, lexicon: MentionLexicon) -> LabelState:
    """:func:`label_sentence` over a bare string (used by the CLEV scorer)."""
    resolved, no_finding_hit = _analyze(text.lower(), lexicon)
    if no_finding_hit and all(
        resolved.get(label, Certainty.ABSENT) in (Certainty.ABSENT, Certainty.NEGATIVE)
        for label in SUBSTANTIVE_LABELS
    ):
        resolved[Label.NO_FINDING] = Certainty.POSITIVE
    if not resolved:
        return ALL_ABSENT
    return LabelState.from_dict(resolved)


def present_text(text: str, lexicon: MentionLexicon) -> dict[Label, Certainty]:
    """Substantive uncertain/positive assignments only (pipeline hot path)."""
    resolved, _ = _analyze(text.lower(), lexicon)
    return {
        label: certainty for label, certainty in resolved.items() if certainty.present
    }


def _analyze(low: str, lexicon: MentionLexicon) -> tuple[dict[Label, Certainty], bool]:
    """Resolve certainties for mentioned substantive labels.

    Returns the (label -> certainty) map plus whether a clear-lungs
    (No Finding) phrase matched.
    """
    phrase_re = lexicon._phrase_re
    if phrase_re is None:
        return {}, False
    hits = [
        (m.start(), m.end(), lexicon._label_by_phrase[m.group()])
        for m in phrase_re.finditer(low)
    ]
    if not hits:
        return {}, False

    boundaries = [m.start() for m in _CLAUSE_BOUNDARY.finditer(low)]

    def clause_of(pos: int) -> int:
        idx = 0
        for b in boundaries:
            if b < pos:
                idx += 1
            else:
                break
        return idx

    negations = (
        [(m.start(), clause_of(m.start())) for m in lexicon._negation_re.finditer(low)]
        if lexicon._negation_re
        else []
    )
    uncertains = (
        [(m.start(), clause_of(m.start())) for m in lexicon._uncertainty_re.finditer(low)]
        if lexicon._uncertainty_re
        else []
    )

    # "X or Y" with different labels marks both mentions uncertain.
    coordinated: set[int] = set()
    for i in range(len(hits) - 1):
        s1, e1, lab1 = hits[i]
        s2, e2, lab2 = hits[i + 1]
        if lab1 is not lab2 and _OR_GAP.fullmatch(low, e1, s2):
            coordinated.add(i)
            coordinated.add(i + 1)

    resolved: dict[Label, Certainty] = {}
    no_finding_hit = False
    for i, (start, _end, label) in enumerate(hits):
        if label is Label.NO_FINDING:
            no_finding_hit = True
            continue
        clause = clause_of(start)
        if any(c == clause and pos < start for pos, c in negations):
            certainty = Certainty.NEGATIVE
        elif i in coordinated or any(
            c == clause and pos < start for pos, c in uncertains
        ):
            certainty = Certainty.UNCERTAIN
        else:
            certainty = Certainty.POSITIVE
        prior = resolved.get(label)
        if prior is None or _CERTAINTY_RANK[certainty] > _CERTAINTY_RANK[prior]:
            resolved[label] = certainty

    return resolved, no_finding_hit


@dataclass
class BuiltinLabeler:
    """Pattern labeler over a mention lexicon."""

    lexicon: MentionLexicon = field(default_factory=default_mention_lexicon)

    def __call__(self, sentence: Sentence) -> LabelState:
        return label_sentence(sentence, self.lexicon)

    def present(self, sentence: Sentence) -> dict[Label, Certainty]:
        return present_text(sentence.text, self.lexicon)


class LabelsFormatError(Exception):
    """Raised for malformed external label files."""


_VALUE_TO_CERTAINTY = {
    "": Certainty.ABSENT,
    "0": Certainty.NEGATIVE,
    "0.0": Certainty.NEGATIVE,
    "-1": Certainty.UNCERTAIN,
    "-1.0": Certainty.UNCERTAIN,
    "1": Certainty.POSITIVE,
    "1.0": Certainty.POSITIVE,
}

#: Header of an external label CSV, in canonical order.
EXTERNAL_LABEL_COLUMNS: tuple[str, ...] = (
    "study_id",
    "section",
    "sentence_index",
) + tuple(label.display for label in Label)

ExternalKey = tuple[str, str, int]


def load_external_labels(path: str | Path) -> dict[ExternalKey, LabelState]:
    """Load precomputed sentence labels keyed by (study, section, index).

    Values use the {blank, 0, -1, 1} encoding for {Absent, Negative,
    Uncertain, Positive}.  Unknown columns, bad values, and duplicate
    keys are fatal.
    """
    path = Path(path)
    mapping: dict[ExternalKey, LabelState] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            return mapping
        expected = set(EXTERNAL_LABEL_COLUMNS)
        unknown = [col for col in header if col not in expected]
        if unknown:
            raise LabelsFormatError(f"{path}: unknown label column {unknown[0]!r}")
        missing = [col for col in EXTERNAL_LABEL_COLUMNS if col not in header]
        if missing:
            raise LabelsFormatError(f"{path}: missing column {missing[0]!r}")
        col_index = {col: header.index(col) for col in header}
        label_cols = [(label, col_index[label.display]) for label in Label]
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise LabelsFormatError(f"{path}: row {row_no}: expected {len(header)} fields")
            try:
                sentence_index = int(row[col_index["sentence_index"]])
            except ValueError:
                raise LabelsFormatError(
                    f"{path}: row {row_no}: bad sentence_index {row[col_index['sentence_index']]!r}"
                ) from None
            key: ExternalKey = (
                row[col_index["study_id"]],
                row[col_index["section"]],
                sentence_index,
            )
            if key in mapping:
                raise LabelsFormatError(f"{path}: row {row_no}: duplicate key {key}")
            states = []
            for label, idx in label_cols:
                raw = row[idx].strip()
                try:
                    states.append(_VALUE_TO_CERTAINTY[raw])
                except KeyError:
                    raise LabelsFormatError(
                        f"{path}: row {row_no}: bad value {raw!r} for {label.display}"
                    ) from None
            mapping[key] = LabelState(tuple(states))
    return mapping


@dataclass
class ExternalLabeler:
    """Replays a precomputed label file; unknown sentences are all-Absent.

    ``missing`` counts lookups that fell back to all-Absent.
    """

    mapping: dict[ExternalKey, LabelState]
    missing: int = 0

    def __call__(self, sentence: Sentence) -> LabelState:
        key = (sentence.study_id, sentence.section.value, sentence.index)
        state = self.mapping.get(key)
        if state is None:
            self.missing += 1
            return ALL_ABSENT
        return state

    def present(self, sentence: Sentence) -> dict[Label, Certainty]:
        return self(sentence).substantive_present()


CERTAINTY_TO_VALUE = {
    Certainty.ABSENT: "",
    Certainty.NEGATIVE: "0",
    Certainty.UNCERTAIN: "-1",
    Certainty.POSITIVE: "1",
}
