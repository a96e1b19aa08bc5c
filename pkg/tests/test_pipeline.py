from __future__ import annotations

import json
import random

from radnle.corpus import ImageMeta, IngestError, Split, StudyMeta, ViewPosition, load_corpus
from radnle.labels import Certainty, Label, load_external_labels
from radnle.pipeline import (
    FunnelStats,
    NleRecord,
    PipelineConfig,
    SentenceNle,
    audit_roundtrip,
    build_stats,
    dedup,
    expand_per_image,
    run_pipeline,
)
from radnle.rules import OTHER_MISC, RuleMatch
from radnle.segment import Section

from golden_corpus import write_golden_corpus
from synth import random_corpus
from conftest import write_corpus


def nle(section: Section, index: int, diagnosis, evidence, rule_id="R1", text="x") -> SentenceNle:
    return SentenceNle(
        section=section,
        sentence_index=index,
        nle_text=text,
        match=RuleMatch(rule_id=rule_id, diagnosis=diagnosis, evidence=evidence),
        keywords=("due",),
    )


EDEMA_U = ((Label.EDEMA, Certainty.UNCERTAIN),)
EDEMA_P = ((Label.EDEMA, Certainty.POSITIVE),)
MISC = (OTHER_MISC,)


class TestDedup:
    def test_findings_copy_kept(self):
        findings = nle(Section.FINDINGS, 0, EDEMA_U, MISC, text="findings wording")
        impression = nle(Section.IMPRESSION, 1, EDEMA_U, MISC, text="impression wording")
        kept = dedup([impression, findings])
        assert kept == [findings]

    def test_different_certainty_kept(self):
        first = nle(Section.FINDINGS, 0, EDEMA_P, MISC)
        second = nle(Section.IMPRESSION, 1, EDEMA_U, MISC)
        assert dedup([first, second]) == [first, second]

    def test_ignore_certainty_flag(self):
        first = nle(Section.FINDINGS, 0, EDEMA_P, MISC)
        second = nle(Section.IMPRESSION, 1, EDEMA_U, MISC)
        assert dedup([first, second], ignore_certainty=True) == [first]

    def test_single_record_kept(self):
        only = nle(Section.IMPRESSION, 0, EDEMA_U, MISC)
        assert dedup([only]) == [only]

    def test_different_evidence_kept(self):
        first = nle(Section.FINDINGS, 0, EDEMA_U, MISC)
        second = nle(Section.FINDINGS, 1, EDEMA_U, (Label.LUNG_OPACITY,))
        assert len(dedup([first, second])) == 2


class TestExpandPerImage:
    def meta(self, images) -> StudyMeta:
        return StudyMeta(
            subject_id="s",
            study_id="st",
            images=tuple(ImageMeta(i, ViewPosition.parse(v)) for i, v in images),
            split=Split.TRAIN,
        )

    def test_two_frontal_images(self):
        records = expand_per_image(
            [nle(Section.FINDINGS, 0, EDEMA_U, MISC)],
            self.meta([("b", "AP"), ("a", "AP")]),
        )
        assert [r.image_id for r in records] == ["a", "b"]  # sorted

    def test_zero_frontal_images(self):
        records = expand_per_image(
            [nle(Section.FINDINGS, 0, EDEMA_U, MISC), nle(Section.FINDINGS, 1, EDEMA_P, MISC)],
            self.meta([("l", "LATERAL")]),
        )
        assert records == []

    def test_single_pa(self):
        records = expand_per_image(
            [nle(Section.FINDINGS, 0, EDEMA_U, MISC)], self.meta([("p", "PA")])
        )
        assert len(records) == 1
        assert records[0].view_position == "PA"


class TestStats:
    def test_empty_records(self):
        stats = build_stats([], FunnelStats(), n_triplets=0)
        assert stats["diagnosis_combinations"] == []
        assert stats["evidence_combinations"] == []
        assert stats["explanation_keywords"] == []
        assert stats["schema_version"] == 1

    def test_keyword_keys_subset_of_lexicon(self, tmp_path):
        from radnle.keywords import default_lexicon

        root, metadata, splits = write_golden_corpus(tmp_path)
        result = run_pipeline(
            load_corpus(root, metadata, splits), PipelineConfig(), tmp_path / "out"
        )
        keys = {key for key, _ in result.stats["explanation_keywords"]}
        assert keys <= set(default_lexicon().explanation)

    def test_histograms_match_hand_count(self, tmp_path):
        """Golden-corpus histograms were counted by hand, study by study."""
        root, metadata, splits = write_golden_corpus(tmp_path)
        result = run_pipeline(
            load_corpus(root, metadata, splits), PipelineConfig(), tmp_path / "out"
        )
        diagnosis = dict(map(tuple, result.stats["diagnosis_combinations"]))
        assert diagnosis["Edema"] == 7
        assert diagnosis["Pneumonia"] == 7
        assert diagnosis["Edema, Pneumonia"] == 3
        assert diagnosis["Atelectasis, Pneumonia"] == 2
        evidence = dict(map(tuple, result.stats["evidence_combinations"]))
        assert evidence["Lung Opacity"] == 13
        assert evidence["other_misc"] == 3
        assert evidence["Consolidation, Lung Opacity"] == 2
        keywords = dict(map(tuple, result.stats["explanation_keywords"]))
        assert keywords["may represent"] == 6
        assert keywords["due"] == 5
        assert sum(keywords.values()) == 27

    def test_split_partition(self, tmp_path):
        root, metadata, splits = write_golden_corpus(tmp_path)
        run_pipeline(load_corpus(root, metadata, splits), PipelineConfig(), tmp_path / "out")
        study_splits: dict[str, set[str]] = {}
        for name in ("train", "dev", "test", "unassigned"):
            path = tmp_path / "out" / f"mimic_nle_{name}.jsonl"
            if not path.exists():
                continue
            for line in path.read_text().splitlines():
                record = json.loads(line)
                assert record["split"] == name
                study_splits.setdefault(record["study_id"], set()).add(name)
        assert study_splits
        for study, seen in study_splits.items():
            assert len(seen) == 1, (study, seen)


class TestRunPipeline:
    def test_empty_corpus(self, tmp_path, corpus_on_disk):
        root, metadata, splits = corpus_on_disk([])
        result = run_pipeline(
            load_corpus(root, metadata, splits), PipelineConfig(), tmp_path / "out"
        )
        assert result.funnel.as_sequence() == (0, 0, 0, 0, 0, 0)
        assert result.n_records == 0
        train = (tmp_path / "out" / "mimic_nle_train.jsonl").read_text()
        assert train == ""
        stats = json.loads((tmp_path / "out" / "stats.json").read_text())
        assert stats["n_records"] == 0

    def test_all_anonymized(self, tmp_path, corpus_on_disk):
        root, metadata, splits = corpus_on_disk(
            [
                dict(
                    subject="1",
                    study="10",
                    images=[("i", "AP")],
                    split="train",
                    text="FINDINGS: Effusion likely due to ___. IMPRESSION: Noted on ___.\n",
                )
            ]
        )
        result = run_pipeline(
            load_corpus(root, metadata, splits), PipelineConfig(), tmp_path / "out"
        )
        assert result.funnel.after_anonymized_filter == 0
        assert result.n_records == 0

    def test_lateral_only_dropped_at_frontal_stage(self, tmp_path, corpus_on_disk):
        root, metadata, splits = corpus_on_disk(
            [
                dict(
                    subject="1",
                    study="10",
                    images=[("i", "LATERAL")],
                    split="train",
                    text="FINDINGS: Consolidation worrisome for pneumonia.\n",
                )
            ]
        )
        result = run_pipeline(
            load_corpus(root, metadata, splits), PipelineConfig(), tmp_path / "out"
        )
        assert result.funnel.rule_matched == 1
        assert result.funnel.after_dedup == 1
        assert result.funnel.after_frontal_restriction == 0
        assert result.n_records == 0

    def test_skipped_study_recorded(self, tmp_path, corpus_on_disk):
        root, metadata, splits = corpus_on_disk(
            [dict(subject="1", study="10", images=[], split="train", text="nothing here\n")]
        )
        errors: list[IngestError] = []
        result = run_pipeline(
            load_corpus(root, metadata, splits, errors=errors),
            PipelineConfig(),
            tmp_path / "out",
            ingest_errors=errors,
        )
        assert result.n_skipped == 1
        content = (tmp_path / "out" / "ingest_errors.csv").read_text()
        assert "no_sections" in content

    def test_unassigned_split_file(self, tmp_path, corpus_on_disk):
        root, metadata, splits = corpus_on_disk(
            [
                dict(
                    subject="1",
                    study="10",
                    images=[("i", "AP")],
                    split=None,
                    text="FINDINGS: Consolidation worrisome for pneumonia.\n",
                )
            ]
        )
        run_pipeline(load_corpus(root, metadata, splits), PipelineConfig(), tmp_path / "out")
        unassigned = (tmp_path / "out" / "mimic_nle_unassigned.jsonl").read_text()
        assert json.loads(unassigned)["split"] == "unassigned"

    def test_jobs_do_not_change_bytes(self, tmp_path):
        root, metadata, splits = write_golden_corpus(tmp_path)
        config = PipelineConfig()
        run_pipeline(load_corpus(root, metadata, splits), config, tmp_path / "o1", jobs=1)
        run_pipeline(load_corpus(root, metadata, splits), config, tmp_path / "o2", jobs=2)
        for name in ("mimic_nle_train.jsonl", "triplets.csv", "stats.json"):
            assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()

    def test_record_round_trip_serialization(self, tmp_path):
        root, metadata, splits = write_golden_corpus(tmp_path)
        run_pipeline(load_corpus(root, metadata, splits), PipelineConfig(), tmp_path / "out")
        for line in (tmp_path / "out" / "mimic_nle_train.jsonl").read_text().splitlines():
            payload = json.loads(line)
            record = NleRecord.from_json_dict(payload)
            assert record.to_json_dict() == payload


class TestExternalLabelerPath:
    def test_external_labels_drive_rules(self, tmp_path, corpus_on_disk):
        # builtin sees only Lung Opacity (no rule); the external file adds
        # Consolidation, turning the sentence into an R5 record
        root, metadata, splits = corpus_on_disk(
            [
                dict(
                    subject="1",
                    study="10",
                    images=[("i", "AP")],
                    split="train",
                    text="FINDINGS: Veiling opacity on the left.\n",
                )
            ]
        )
        header = ["study_id", "section", "sentence_index"] + [l.display for l in Label]
        values = {"Lung Opacity": "1", "Consolidation": "1"}
        row = ["10", "findings", "0"] + [values.get(l.display, "") for l in Label]
        labels_csv = tmp_path / "labels.csv"
        labels_csv.write_text(
            ",".join(header) + "\n" + ",".join(row) + "\n", encoding="utf-8"
        )
        config = PipelineConfig(external_labels=load_external_labels(labels_csv))
        result = run_pipeline(
            load_corpus(root, metadata, splits), config, tmp_path / "out"
        )
        assert result.n_records == 1
        record = json.loads(
            (tmp_path / "out" / "mimic_nle_train.jsonl").read_text()
        )
        assert record["rule_id"] == "R5"
        builtin_result = run_pipeline(
            load_corpus(root, metadata, splits), PipelineConfig(), tmp_path / "out2"
        )
        assert builtin_result.n_records == 0

    def test_missing_sentences_counted(self, tmp_path, corpus_on_disk):
        root, metadata, splits = corpus_on_disk(
            [
                dict(
                    subject="1",
                    study="10",
                    images=[("i", "AP")],
                    split="train",
                    text="FINDINGS: Opacity suggests edema. No pneumothorax.\n",
                )
            ]
        )
        header = ["study_id", "section", "sentence_index"] + [l.display for l in Label]
        labels_csv = tmp_path / "labels.csv"
        labels_csv.write_text(",".join(header) + "\n", encoding="utf-8")
        config = PipelineConfig(external_labels=load_external_labels(labels_csv))
        result = run_pipeline(load_corpus(root, metadata, splits), config, tmp_path / "out")
        assert result.external_labels_missing == 2
        assert result.n_records == 0


class TestRoundTripAudit:
    def test_golden_run_roundtrips(self, tmp_path):
        root, metadata, splits = write_golden_corpus(tmp_path)
        config = PipelineConfig()
        run_pipeline(load_corpus(root, metadata, splits), config, tmp_path / "out")
        records = []
        for name in (
            "mimic_nle_train.jsonl",
            "mimic_nle_dev.jsonl",
            "mimic_nle_test.jsonl",
            "mimic_nle_unassigned.jsonl",
        ):
            for line in (tmp_path / "out" / name).read_text().splitlines():
                records.append(NleRecord.from_json_dict(json.loads(line)))
        assert records
        assert audit_roundtrip(records, config) == []


def test_funnel_monotone_on_random_corpora(tmp_path):
    rng = random.Random(99)
    for case in range(15):
        studies = random_corpus(rng, rng.randint(1, 12))
        base = tmp_path / f"case{case}"
        base.mkdir()
        root, metadata, splits = write_corpus(base, studies)
        result = run_pipeline(
            load_corpus(root, metadata, splits), PipelineConfig(), base / "out"
        )
        seq = result.funnel.as_sequence()
        assert all(a >= b for a, b in zip(seq, seq[1:])), seq
