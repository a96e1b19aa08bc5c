from __future__ import annotations

import csv
from pathlib import Path

import pytest


def write_corpus(
    base: Path,
    studies: list[dict],
) -> tuple[Path, Path, Path]:
    """Materialize a corpus on disk.

    Each study dict: subject, study, text, images=[(image_id, view)],
    split (optional; omitted studies stay out of the split CSV).
    Returns (report_root, metadata_csv, splits_csv).
    """
    root = base / "reports"
    root.mkdir(parents=True, exist_ok=True)
    metadata = base / "metadata.csv"
    splits = base / "splits.csv"
    with open(metadata, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["image_id", "study_id", "subject_id", "view_position"])
        for study in studies:
            for image_id, view in study.get("images", []):
                writer.writerow([image_id, study["study"], study["subject"], view])
    with open(splits, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["study_id", "split"])
        for study in studies:
            if study.get("split"):
                writer.writerow([study["study"], study["split"]])
    for study in studies:
        subject_dir = root / f"p{study['subject']}"
        subject_dir.mkdir(exist_ok=True)
        (subject_dir / f"s{study['study']}.txt").write_text(
            study["text"], encoding="utf-8"
        )
    return root, metadata, splits


@pytest.fixture
def corpus_on_disk(tmp_path):
    def _write(studies: list[dict]) -> tuple[Path, Path, Path]:
        return write_corpus(tmp_path, studies)

    return _write
