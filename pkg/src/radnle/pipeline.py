"""The extraction funnel: sections -> sentences -> filters -> labels ->
rules -> dedup -> frontal-image expansion -> dataset files.

Stage order is fixed; every stage count in :class:`FunnelStats` is a
sentence count (pre image expansion) so the sequence is non-increasing.
Output bytes are deterministic for a given corpus regardless of the
worker count.
"""

from __future__ import annotations

import json
import multiprocessing
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .corpus import IngestError, Report, Split, StudyMeta
from .keywords import KeywordLexicon, _classify_filter, _tag_explanation, default_lexicon
from .labels import (
    BuiltinLabeler,
    Certainty,
    ExternalKey,
    ExternalLabeler,
    Label,
    LabelState,
    MentionLexicon,
    default_mention_lexicon,
)
from .rules import OTHER_MISC, RuleMatch, RulePattern, builtin_rules, match_present
from .segment import Section, Sentence, split_sentences

STATS_SCHEMA_VERSION = 1

SPLIT_FILES = {
    Split.TRAIN: "mimic_nle_train.jsonl",
    Split.DEV: "mimic_nle_dev.jsonl",
    Split.TEST: "mimic_nle_test.jsonl",
    Split.UNASSIGNED: "mimic_nle_unassigned.jsonl",
}

TRIPLETS_FILE = "triplets.csv"
STATS_FILE = "stats.json"
INGEST_ERRORS_FILE = "ingest_errors.csv"

_TRIPLET_COLUMNS = (
    "subject_id",
    "study_id",
    "image_id",
    "view_position",
    "section",
    "sentence_index",
    "diagnosis",
    "certainty",
    "evidence",
    "rule_id",
    "nle",
    "split",
)


@dataclass
class FunnelStats:
    """Sentence counts after each funnel stage (non-increasing)."""

    sentences_total: int = 0
    after_anonymized_filter: int = 0
    after_nondescriptive_filter: int = 0
    rule_matched: int = 0
    after_dedup: int = 0
    after_frontal_restriction: int = 0

    def add(self, other: "FunnelStats") -> None:
        self.sentences_total += other.sentences_total
        self.after_anonymized_filter += other.after_anonymized_filter
        self.after_nondescriptive_filter += other.after_nondescriptive_filter
        self.rule_matched += other.rule_matched
        self.after_dedup += other.after_dedup
        self.after_frontal_restriction += other.after_frontal_restriction

    def as_sequence(self) -> tuple[int, ...]:
        return (
            self.sentences_total,
            self.after_anonymized_filter,
            self.after_nondescriptive_filter,
            self.rule_matched,
            self.after_dedup,
            self.after_frontal_restriction,
        )

    def to_json_dict(self) -> dict[str, int]:
        return {
            "sentences_total": self.sentences_total,
            "after_anonymized_filter": self.after_anonymized_filter,
            "after_nondescriptive_filter": self.after_nondescriptive_filter,
            "rule_matched": self.rule_matched,
            "after_dedup": self.after_dedup,
            "after_frontal_restriction": self.after_frontal_restriction,
        }


@dataclass(frozen=True)
class NleRecord:
    """One extracted image-diagnosis-NLE row (final dataset unit)."""

    subject_id: str
    study_id: str
    image_id: str
    view_position: str
    section: Section
    sentence_index: int
    nle_text: str
    diagnosis: tuple[tuple[Label, Certainty], ...]
    evidence: tuple[Label | str, ...]
    rule_id: str
    keywords: tuple[str, ...]
    split: Split

    def to_json_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "study_id": self.study_id,
            "image_id": self.image_id,
            "view_position": self.view_position,
            "section": self.section.value,
            "sentence_index": self.sentence_index,
            "nle": self.nle_text,
            "diagnosis": [[label.display, certainty.value] for label, certainty in self.diagnosis],
            "evidence": [_evidence_name(item) for item in self.evidence],
            "rule_id": self.rule_id,
            "keywords": list(self.keywords),
            "split": self.split.value,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "NleRecord":
        return cls(
            subject_id=payload["subject_id"],
            study_id=payload["study_id"],
            image_id=payload["image_id"],
            view_position=payload["view_position"],
            section=Section(payload["section"]),
            sentence_index=payload["sentence_index"],
            nle_text=payload["nle"],
            diagnosis=tuple(
                (Label.from_display(name), Certainty(value))
                for name, value in payload["diagnosis"]
            ),
            evidence=tuple(
                item if item == OTHER_MISC else Label.from_display(item)
                for item in payload["evidence"]
            ),
            rule_id=payload["rule_id"],
            keywords=tuple(payload["keywords"]),
            split=Split(payload["split"]),
        )


def _evidence_name(item: Label | str) -> str:
    return item if isinstance(item, str) else item.display


@dataclass(frozen=True)
class SentenceNle:
    """A rule-matched sentence before per-image expansion."""

    section: Section
    sentence_index: int
    nle_text: str
    match: RuleMatch
    keywords: tuple[str, ...]


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a worker needs; must stay picklable."""

    keyword_lexicon: KeywordLexicon = field(default_factory=default_lexicon)
    mention_lexicon: MentionLexicon = field(default_factory=default_mention_lexicon)
    external_labels: dict[ExternalKey, LabelState] | None = None
    rules: tuple[RulePattern, ...] = field(default_factory=builtin_rules)
    dedup_ignore_certainty: bool = False

    def make_labeler(self) -> BuiltinLabeler | ExternalLabeler:
        if self.external_labels is not None:
            return ExternalLabeler(self.external_labels)
        return BuiltinLabeler(self.mention_lexicon)


@dataclass
class StudyOutcome:
    """Per-study worker result, merged in deterministic study order."""

    subject_id: str
    study_id: str
    skipped: bool
    funnel: FunnelStats
    records: list[NleRecord]
    external_missing: int = 0


def iter_sentences(report: Report) -> Iterator[Sentence]:
    """Findings sentences first, then impression, one 0-based index."""
    index = 0
    for section, text in (
        (Section.FINDINGS, report.findings),
        (Section.IMPRESSION, report.impression),
    ):
        if text is None:
            continue
        for sentence_text in split_sentences(text):
            yield Sentence.make(report.meta.study_id, section, index, sentence_text)
            index += 1


def dedup(entries: list[SentenceNle], *, ignore_certainty: bool = False) -> list[SentenceNle]:
    """Drop repeats of the same label combination within one study.

    The key is the diagnosis set (with certainties unless
    ``ignore_certainty``) plus the evidence set; the first entry in
    (findings before impression, sentence index) order survives.
    """
    ordered = sorted(
        entries,
        key=lambda entry: (entry.section is not Section.FINDINGS, entry.sentence_index),
    )
    seen: set = set()
    kept: list[SentenceNle] = []
    for entry in ordered:
        if ignore_certainty:
            diag_key = tuple(sorted(label for label, _ in entry.match.diagnosis))
        else:
            diag_key = tuple(sorted(entry.match.diagnosis))
        key = (diag_key, tuple(_evidence_name(e) for e in entry.match.evidence))
        if key in seen:
            continue
        seen.add(key)
        kept.append(entry)
    return kept


def expand_per_image(entries: list[SentenceNle], meta: StudyMeta) -> list[NleRecord]:
    """Cross surviving sentences with the study's frontal images."""
    records: list[NleRecord] = []
    frontal = sorted(meta.frontal_images, key=lambda img: img.image_id)
    for entry in sorted(
        entries, key=lambda e: (e.section is not Section.FINDINGS, e.sentence_index)
    ):
        for image in frontal:
            records.append(
                NleRecord(
                    subject_id=meta.subject_id,
                    study_id=meta.study_id,
                    image_id=image.image_id,
                    view_position=image.view_position.value,
                    section=entry.section,
                    sentence_index=entry.sentence_index,
                    nle_text=entry.nle_text,
                    diagnosis=entry.match.diagnosis,
                    evidence=entry.match.evidence,
                    rule_id=entry.match.rule_id,
                    keywords=entry.keywords,
                    split=meta.split,
                )
            )
    return records


def process_report(
    report: Report,
    config: PipelineConfig,
    labeler: BuiltinLabeler | ExternalLabeler | None = None,
) -> StudyOutcome:
    """Run one report through every sentence-level stage."""
    meta = report.meta
    funnel = FunnelStats()
    if report.skipped:
        return StudyOutcome(meta.subject_id, meta.study_id, True, funnel, [])
    if labeler is None:
        labeler = config.make_labeler()
    missing_before = getattr(labeler, "missing", 0)

    matched: list[SentenceNle] = []
    for sentence in iter_sentences(report):
        funnel.sentences_total += 1
        low = sentence.text.lower()
        if "_" in low:
            continue
        funnel.after_anonymized_filter += 1
        if _classify_filter(low, config.keyword_lexicon) is not None:
            continue
        funnel.after_nondescriptive_filter += 1
        keyword_matches = _tag_explanation(low, config.keyword_lexicon)
        present = labeler.present(sentence)
        if not present:
            continue
        match = match_present(present, bool(keyword_matches), config.rules)
        if match is None:
            continue
        funnel.rule_matched += 1
        matched.append(
            SentenceNle(
                section=sentence.section,
                sentence_index=sentence.index,
                nle_text=sentence.text,
                match=match,
                keywords=tuple(phrase for phrase, _ in keyword_matches),
            )
        )

    surviving = dedup(matched, ignore_certainty=config.dedup_ignore_certainty)
    funnel.after_dedup = len(surviving)
    if meta.frontal_images:
        funnel.after_frontal_restriction = len(surviving)
        records = expand_per_image(surviving, meta)
    else:
        records = []
    return StudyOutcome(
        subject_id=meta.subject_id,
        study_id=meta.study_id,
        skipped=False,
        funnel=funnel,
        records=records,
        external_missing=getattr(labeler, "missing", 0) - missing_before,
    )


_WORKER_CONFIG: PipelineConfig | None = None
_WORKER_LABELER = None


def _init_worker(config: PipelineConfig) -> None:
    global _WORKER_CONFIG, _WORKER_LABELER
    _WORKER_CONFIG = config
    _WORKER_LABELER = config.make_labeler()


def _process_in_worker(report: Report) -> StudyOutcome:
    assert _WORKER_CONFIG is not None
    return process_report(report, _WORKER_CONFIG, _WORKER_LABELER)


def _outcomes(
    reports: Iterable[Report], config: PipelineConfig, jobs: int
) -> Iterator[StudyOutcome]:
    if jobs <= 1:
        labeler = config.make_labeler()
        for report in reports:
            yield process_report(report, config, labeler)
        return
    with multiprocessing.get_context("fork").Pool(
        processes=jobs, initializer=_init_worker, initargs=(config,)
    ) as pool:
        yield from pool.imap(_process_in_worker, reports, chunksize=16)


@dataclass
class PipelineResult:
    funnel: FunnelStats
    n_records: int
    n_triplets: int
    n_skipped: int
    external_labels_missing: int
    paths: dict[str, Path]
    stats: dict


def build_stats(
    records: list[NleRecord],
    funnel: FunnelStats,
    *,
    n_triplets: int,
    external_labels_missing: int = 0,
) -> dict:
    """Assemble the stats payload: funnel plus the three histograms."""
    diagnosis_counter: Counter[str] = Counter()
    evidence_counter: Counter[str] = Counter()
    keyword_counter: Counter[str] = Counter()
    for record in records:
        diagnosis_counter[
            ", ".join(sorted(label.display for label, _ in record.diagnosis))
        ] += 1
        evidence_counter[
            ", ".join(sorted(_evidence_name(item) for item in record.evidence))
        ] += 1
        for phrase in record.keywords:
            keyword_counter[phrase] += 1

    def ranked(counter: Counter[str]) -> list[list]:
        return [
            [key, count]
            for key, count in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
        ]

    return {
        "schema_version": STATS_SCHEMA_VERSION,
        "funnel": funnel.to_json_dict(),
        "n_records": len(records),
        "n_triplets": n_triplets,
        "external_labels_missing": external_labels_missing,
        "diagnosis_combinations": ranked(diagnosis_counter),
        "evidence_combinations": ranked(evidence_counter),
        "explanation_keywords": ranked(keyword_counter),
    }


def emit_stats(
    records: list[NleRecord],
    funnel: FunnelStats,
    out_path: str | Path,
    *,
    n_triplets: int | None = None,
    external_labels_missing: int = 0,
) -> dict:
    """Write stats.json; returns the payload."""
    if n_triplets is None:
        n_triplets = sum(len(record.diagnosis) for record in records)
    stats = build_stats(
        records,
        funnel,
        n_triplets=n_triplets,
        external_labels_missing=external_labels_missing,
    )
    path = Path(out_path)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(stats, handle, indent=2, ensure_ascii=False)
        handle.write("\n")
    return stats


def _write_jsonl(path: Path, records: Iterable[NleRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record.to_json_dict(), ensure_ascii=False))
            handle.write("\n")


def _write_triplets(path: Path, records: Iterable[NleRecord]) -> int:
    import csv

    count = 0
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_TRIPLET_COLUMNS)
        for record in records:
            evidence = "|".join(_evidence_name(item) for item in record.evidence)
            for label, certainty in record.diagnosis:
                writer.writerow(
                    (
                        record.subject_id,
                        record.study_id,
                        record.image_id,
                        record.view_position,
                        record.section.value,
                        record.sentence_index,
                        label.display,
                        certainty.value,
                        evidence,
                        record.rule_id,
                        record.nle_text,
                        record.split.value,
                    )
                )
                count += 1
    return count


def _write_ingest_errors(path: Path, errors: Iterable[IngestError]) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("subject_id", "study_id", "reason"))
        for error in sorted(errors, key=lambda e: (e.subject_id, e.study_id, e.reason)):
            writer.writerow((error.subject_id, error.study_id, error.reason))


def run_pipeline(
    reports: Iterable[Report],
    config: PipelineConfig,
    out_dir: str | Path,
    *,
    jobs: int = 1,
    ingest_errors: list[IngestError] | None = None,
) -> PipelineResult:
    """Execute the full funnel and write the dataset files.

    ``reports`` must already be in (subject_id, study_id) order, as
    :func:`radnle.corpus.load_corpus` yields them.  ``ingest_errors``
    may be the collector passed to the loader; skipped studies (no
    sections) are appended to it here.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    errors = ingest_errors if ingest_errors is not None else []

    funnel = FunnelStats()
    by_split: dict[Split, list[NleRecord]] = {split: [] for split in Split}
    all_records: list[NleRecord] = []
    n_skipped = 0
    external_missing = 0

    for outcome in _outcomes(reports, config, jobs):
        funnel.add(outcome.funnel)
        external_missing += outcome.external_missing
        if outcome.skipped:
            n_skipped += 1
            errors.append(IngestError(outcome.subject_id, outcome.study_id, "no_sections"))
            continue
        for record in outcome.records:
            by_split[record.split].append(record)
            all_records.append(record)

    paths: dict[str, Path] = {}
    for split in (Split.TRAIN, Split.DEV, Split.TEST):
        path = out / SPLIT_FILES[split]
        _write_jsonl(path, by_split[split])
        paths[SPLIT_FILES[split]] = path
    if by_split[Split.UNASSIGNED]:
        path = out / SPLIT_FILES[Split.UNASSIGNED]
        _write_jsonl(path, by_split[Split.UNASSIGNED])
        paths[SPLIT_FILES[Split.UNASSIGNED]] = path

    triplets_path = out / TRIPLETS_FILE
    n_triplets = _write_triplets(triplets_path, all_records)
    paths[TRIPLETS_FILE] = triplets_path

    stats_path = out / STATS_FILE
    stats = emit_stats(
        all_records,
        funnel,
        stats_path,
        n_triplets=n_triplets,
        external_labels_missing=external_missing,
    )
    paths[STATS_FILE] = stats_path

    errors_path = out / INGEST_ERRORS_FILE
    _write_ingest_errors(errors_path, errors)
    paths[INGEST_ERRORS_FILE] = errors_path

    return PipelineResult(
        funnel=funnel,
        n_records=len(all_records),
        n_triplets=n_triplets,
        n_skipped=n_skipped,
        external_labels_missing=external_missing,
        paths=paths,
        stats=stats,
    )


def audit_roundtrip(
    records: Iterable[NleRecord], config: PipelineConfig
) -> list[NleRecord]:
    """Re-label every record's text and re-match; return disagreements.

    An empty result means the emitted dataset is internally consistent:
    stored rule_id/diagnosis/evidence all reproduce from the NLE text.
    """
    labeler = config.make_labeler()
    mismatched: list[NleRecord] = []
    for record in records:
        sentence = Sentence.make(
            record.study_id, record.section, record.sentence_index, record.nle_text
        )
        keyword_matches = _tag_explanation(sentence.text.lower(), config.keyword_lexicon)
        present = labeler.present(sentence)
        match = match_present(present, bool(keyword_matches), config.rules)
        if (
            match is None
            or match.rule_id != record.rule_id
            or match.diagnosis != record.diagnosis
            or match.evidence != record.evidence
        ):
            mismatched.append(record)
    return mismatched
