"""Corpus loading and Findings/Impression section extraction.

The on-disk layout mirrors ``<root>/p<subject>/s<study>.txt`` (nested
group directories as in the public chest X-ray corpora also work); a
manifest CSV mapping study_id to file path overrides discovery for
other layouts.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator


class ViewPosition(str, Enum):
    AP = "AP"
    PA = "PA"
    LATERAL = "LATERAL"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, raw: str) -> "ViewPosition":
        value = raw.strip().upper()
        if value in ("AP", "PA"):
            return cls(value)
        if value in ("LATERAL", "LL"):
            return cls.LATERAL
        return cls.OTHER

    @property
    def frontal(self) -> bool:
        return self in (ViewPosition.AP, ViewPosition.PA)


class Split(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"
    UNASSIGNED = "unassigned"

    @classmethod
    def parse(cls, raw: str) -> "Split":
        value = raw.strip().lower()
        if value == "validate":  # official split files use this for dev
            return cls.DEV
        return cls(value)


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    view_position: ViewPosition


@dataclass(frozen=True)
class StudyMeta:
    subject_id: str
    study_id: str
    images: tuple[ImageMeta, ...] = ()
    split: Split = Split.UNASSIGNED

    @property
    def frontal_images(self) -> tuple[ImageMeta, ...]:
        return tuple(img for img in self.images if img.view_position.frontal)


@dataclass(frozen=True)
class Report:
    meta: StudyMeta
    raw_text: str
    findings: str | None
    impression: str | None

    @property
    def skipped(self) -> bool:
        """True when the report has neither section."""
        return self.findings is None and self.impression is None


@dataclass(frozen=True)
class IngestError:
    """One study that could not be processed, with a reason code."""

    subject_id: str
    study_id: str
    reason: str


class CorpusFormatError(Exception):
    """Fatal corpus problem (malformed CSV row, duplicate study, ...)."""


# Section headers terminate the previous section; only the first two are
# ever extracted.  Headers are recognized at line starts and, after
# whitespace, mid-line ("FINDINGS: A. IMPRESSION: B." yields both).
_HEADER_RE = re.compile(
    r"(?:^|(?<=\s))(findings|impression|comparison|indication|technique|history)\s*:",
    re.IGNORECASE,
)

_EXTRACTED_SECTIONS = ("findings", "impression")


def extract_sections(raw_text: str) -> tuple[str | None, str | None]:
    """Pull the Findings and Impression bodies out of a raw report.

    A section runs from after its header to the next recognized header
    or end of text, trimmed.  The first occurrence of each header wins;
    an empty body counts as absent.
    """
    headers = [(m.start(), m.end(), m.group(1).lower()) for m in _HEADER_RE.finditer(raw_text)]
    found: dict[str, str] = {}
    for i, (_start, body_start, name) in enumerate(headers):
        if name not in _EXTRACTED_SECTIONS or name in found:
            continue
        body_end = headers[i + 1][0] if i + 1 < len(headers) else len(raw_text)
        body = raw_text[body_start:body_end].strip()
        if body:
            found[name] = body
    return found.get("findings"), found.get("impression")


def _read_metadata(
    path: Path,
) -> tuple[dict[str, tuple[ImageMeta, ...]], dict[str, str]]:
    """image metadata CSV -> (study_id -> images, study_id -> subject_id)."""
    required = ("image_id", "study_id", "subject_id", "view_position")
    images: dict[str, list[ImageMeta]] = {}
    subjects: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for column in required:
            if column not in header:
                raise CorpusFormatError(f"{path}: missing column {column!r}")
        for row_no, row in enumerate(reader, start=2):
            values = [row.get(column) for column in required]
            if any(value is None or value == "" for value in values):
                raise CorpusFormatError(f"{path}: row {row_no}: incomplete row")
            image_id, study_id, subject_id, view_raw = values
            study_images = images.setdefault(study_id, [])
            if any(image.image_id == image_id for image in study_images):
                raise CorpusFormatError(
                    f"{path}: row {row_no}: duplicate image {image_id!r} in study {study_id!r}"
                )
            study_images.append(
                ImageMeta(image_id=image_id, view_position=ViewPosition.parse(view_raw))
            )
            subjects.setdefault(study_id, subject_id)
    return {sid: tuple(imgs) for sid, imgs in images.items()}, subjects


def _read_splits(path: Path) -> dict[str, Split]:
    splits: dict[str, Split] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for column in ("study_id", "split"):
            if column not in header:
                raise CorpusFormatError(f"{path}: missing column {column!r}")
        for row_no, row in enumerate(reader, start=2):
            study_id, raw = row.get("study_id"), row.get("split")
            if not study_id or raw is None:
                raise CorpusFormatError(f"{path}: row {row_no}: incomplete row")
            try:
                splits[study_id] = Split.parse(raw)
            except ValueError:
                raise CorpusFormatError(
                    f"{path}: row {row_no}: unknown split {raw!r}"
                ) from None
    return splits


def _read_manifest(path: Path) -> list[tuple[str, Path]]:
    entries: list[tuple[str, Path]] = []
    base = path.parent
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for column in ("study_id", "path"):
            if column not in header:
                raise CorpusFormatError(f"{path}: missing column {column!r}")
        seen: set[str] = set()
        for row_no, row in enumerate(reader, start=2):
            study_id, rel = row.get("study_id"), row.get("path")
            if not study_id or not rel:
                raise CorpusFormatError(f"{path}: row {row_no}: incomplete row")
            if study_id in seen:
                raise CorpusFormatError(f"{path}: row {row_no}: duplicate study {study_id!r}")
            seen.add(study_id)
            file_path = Path(rel)
            if not file_path.is_absolute():
                file_path = base / file_path
            entries.append((study_id, file_path))
    return entries


def _discover_studies(report_root: Path, subjects: dict[str, str]) -> list[tuple[str, str, Path]]:
    """Walk the directory layout -> [(subject_id, study_id, path)]."""
    studies: dict[str, tuple[str, Path]] = {}
    for txt in report_root.rglob("*.txt"):
        stem = txt.stem
        study_id = stem[1:] if stem.startswith("s") else stem
        parent = txt.parent.name
        if parent.startswith("p") and len(parent) > 1:
            subject_id = parent[1:]
        else:
            subject_id = subjects.get(study_id, "")
        if study_id in studies:
            raise CorpusFormatError(
                f"duplicate study {study_id!r}: {studies[study_id][1]} and {txt}"
            )
        studies[study_id] = (subject_id, txt)
    return [(subject, study, path) for study, (subject, path) in studies.items()]


def load_corpus(
    report_root: str | Path,
    metadata_file: str | Path,
    split_file: str | Path | None = None,
    *,
    manifest_file: str | Path | None = None,
    errors: list[IngestError] | None = None,
) -> Iterator[Report]:
    """Yield one Report per study file, sorted by (subject_id, study_id).

    Unreadable files become :class:`IngestError` records in ``errors``
    and the stream continues; malformed CSVs raise
    :class:`CorpusFormatError`.  Studies absent from the split file get
    ``Split.UNASSIGNED``.
    """
    report_root = Path(report_root)
    images, subjects = _read_metadata(Path(metadata_file))
    splits = _read_splits(Path(split_file)) if split_file else {}

    if manifest_file is not None:
        entries = [
            (subjects.get(study_id, ""), study_id, path)
            for study_id, path in _read_manifest(Path(manifest_file))
        ]
    else:
        entries = _discover_studies(report_root, subjects)
    entries.sort(key=lambda item: (item[0], item[1]))

    for subject_id, study_id, path in entries:
        meta = StudyMeta(
            subject_id=subject_id,
            study_id=study_id,
            images=images.get(study_id, ()),
            split=splits.get(study_id, Split.UNASSIGNED),
        )
        try:
            raw_text = path.read_text(encoding="utf-8")
        except OSError:
            if errors is not None:
                errors.append(IngestError(subject_id, study_id, "unreadable"))
            continue
        findings, impression = extract_sections(raw_text)
        yield Report(meta=meta, raw_text=raw_text, findings=findings, impression=impression)
