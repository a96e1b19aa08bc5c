from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from radnle.keywords import (
    FilterReason,
    KeywordLexicon,
    classify_filter,
    default_lexicon,
    tag_explanation,
    tag_sentence,
)
from radnle.segment import Section, Sentence


def sent(text: str) -> Sentence:
    return Sentence.make("s1", Section.FINDINGS, 0, text)


class TestDefaultLexicon:
    def test_explanation_has_14_entries(self):
        assert len(default_lexicon().explanation) == 14

    def test_exemptions_has_3_entries(self):
        assert len(default_lexicon().exemptions) == 3

    def test_worrisome_for_present(self):
        assert "worrisome for" in default_lexicon().explanation

    def test_position_keeps_leading_space(self):
        assert " position" in default_lexicon().technical

    def test_exemption_must_contain_explanation_phrase(self):
        with pytest.raises(ValueError):
            KeywordLexicon(exemptions=("zzz bogus",))


class TestTagExplanation:
    def test_compatible_with(self):
        matches = tag_explanation(
            sent(
                "Right upper lobe new consolidation is compatible with atelectasis "
                "with possibly superimposed aspiration."
            ),
            default_lexicon(),
        )
        assert [phrase for phrase, _ in matches] == ["compatible with"]

    def test_suggestion_exemption(self):
        assert tag_explanation(sent("There is suggestion of edema."), default_lexicon()) == []

    def test_is_suggested_exemption(self):
        assert tag_explanation(sent("Effusion is suggested."), default_lexicon()) == []

    def test_correlate_exemption(self):
        assert tag_explanation(sent("Please correlate clinically."), default_lexicon()) == []

    def test_finding_word_tagged_then_filtered(self):
        result = tag_sentence(sent("Findings may represent pneumonia."), default_lexicon())
        assert [phrase for phrase, _ in result.explanation_matches] == ["may represent"]
        assert result.filter_reason is FilterReason.FINDING_WORD

    def test_offsets_sorted(self):
        matches = tag_explanation(
            sent("Opacity due to edema, potentially due to volume overload."),
            default_lexicon(),
        )
        offsets = [offset for _, offset in matches]
        assert offsets == sorted(offsets)
        assert [phrase for phrase, _ in matches] == ["due", "potentially", "due"]

    def test_stem_matches_continuations(self):
        assert tag_explanation(sent("This suggests pneumonia."), default_lexicon()) != []
        assert tag_explanation(sent("Haziness reflecting edema."), default_lexicon()) != []


class TestClassifyFilter:
    def test_patient_history(self):
        assert (
            classify_filter(sent("Compared to the prior study, stable."), default_lexicon())
            is FilterReason.PATIENT_HISTORY
        )

    def test_anonymized(self):
        assert (
            classify_filter(sent("___ year old with cough."), default_lexicon())
            is FilterReason.ANONYMIZED
        )

    def test_clean_sentence(self):
        assert (
            classify_filter(sent("There is a left pleural effusion."), default_lexicon())
            is None
        )

    def test_anonymized_beats_everything(self):
        assert (
            classify_filter(sent("Compared to prior_study."), default_lexicon())
            is FilterReason.ANONYMIZED
        )

    def test_precedence_history_over_technical(self):
        # "prior" (history) and "ct" (technical) both present
        assert (
            classify_filter(sent("Prior CT was reviewed."), default_lexicon())
            is FilterReason.PATIENT_HISTORY
        )

    def test_recommendation(self):
        assert (
            classify_filter(sent("Recommend repeat radiograph."), default_lexicon())
            is FilterReason.RECOMMENDATION
        )

    def test_technical_substring_over_filters(self):
        # documented fidelity choice: "ct" matches inside ordinary words
        assert (
            classify_filter(sent("Mild atelectasis at the base."), default_lexicon())
            is FilterReason.TECHNICAL
        )
        assert (
            classify_filter(sent("Bony structures are intact."), default_lexicon())
            is FilterReason.TECHNICAL
        )

    def test_position_leading_space_spares_supposition(self):
        assert classify_filter(sent("supposition only"), default_lexicon()) is None
        assert (
            classify_filter(sent("Patient position limits evaluation."), default_lexicon())
            is FilterReason.PATIENT_HISTORY  # "patient" fires first
        )
        assert (
            classify_filter(sent("Body position limits evaluation."), default_lexicon())
            is FilterReason.TECHNICAL
        )


phrase_text = st.text(
    alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Zs")), max_size=60
)


@given(phrase_text)
def test_anonymized_whenever_underscore(text):
    tagged = classify_filter(sent("x_" + text) if text else sent("x_"), default_lexicon())
    assert tagged is FilterReason.ANONYMIZED


@given(phrase_text)
def test_tagging_case_insensitive(text):
    lex = default_lexicon()
    base = "There is edema " + text
    assert tag_explanation(sent(base), lex) == tag_explanation(sent(base.upper()), lex)
    assert classify_filter(sent(base), lex) == classify_filter(sent(base.upper()), lex)


@given(st.sampled_from(default_lexicon().explanation))
def test_plain_phrase_always_tagged(phrase):
    matches = tag_explanation(sent(f"Opacity {phrase} pneumonia."), default_lexicon())
    assert any(p == phrase for p, _ in matches)


@given(st.sampled_from(default_lexicon().exemptions))
def test_matches_never_overlap_exemptions(exemption):
    # the exemption text itself contains an explanation phrase; embedding it
    # anywhere must yield no match inside that occurrence
    matches = tag_explanation(sent(f"There {exemption} of edema."), default_lexicon())
    low = f"there {exemption} of edema.".lower()
    span_start = low.index(exemption)
    span_end = span_start + len(exemption)
    for phrase, offset in matches:
        assert not (span_start <= offset and offset + len(phrase) <= span_end)
