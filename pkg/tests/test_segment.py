from __future__ import annotations

import re

from hypothesis import given
from hypothesis import strategies as st

from radnle.segment import Section, Sentence, split_sentences, tokenize


def test_basic_split():
    assert split_sentences("There is edema. No pneumothorax.") == [
        "There is edema.",
        "No pneumothorax.",
    ]


def test_decimal_not_split():
    assert split_sentences("Effusion measures 2.3 cm.") == ["Effusion measures 2.3 cm."]


def test_empty_input():
    assert split_sentences("") == []


def test_abbreviations_do_not_split():
    assert split_sentences("Seen by Dr. Smith today. Stable.") == [
        "Seen by Dr. Smith today.",
        "Stable.",
    ]
    assert split_sentences("Lines unchanged, e.g. the right PICC. Stable.") == [
        "Lines unchanged, e.g. the right PICC.",
        "Stable.",
    ]
    assert split_sentences("Tube No. 2 is in place. Fine.") == [
        "Tube No. 2 is in place.",
        "Fine.",
    ]


def test_single_letter_initial():
    assert split_sentences("Read by J. Doe. Stable.") == ["Read by J. Doe.", "Stable."]


def test_question_and_exclamation():
    assert split_sentences("Pneumothorax? None seen!") == ["Pneumothorax?", "None seen!"]


def test_multiline_sentence_whitespace_collapsed():
    text = "There is a left\npleural effusion. No pneumothorax."
    assert split_sentences(text) == [
        "There is a left pleural effusion.",
        "No pneumothorax.",
    ]


def test_tokenize_examples():
    assert tokenize("Right-sided pleural effusion.") == [
        "right-sided",
        "pleural",
        "effusion",
        ".",
    ]
    assert tokenize("") == []
    assert tokenize("2.3 cm") == ["2.3", "cm"]


def test_tokenize_surrounding_punct_order():
    assert tokenize("(stable).") == ["(", "stable", ")", "."]


def test_sentence_make_derives_tokens():
    s = Sentence.make("s1", Section.FINDINGS, 0, "No acute process.")
    assert s.tokens == ("no", "acute", "process", ".")


_WS = re.compile(r"\s+")

text_strategy = st.text(
    alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd", "Po", "Zs")),
    max_size=200,
)


@given(text_strategy)
def test_split_reconstructs_modulo_whitespace(text):
    joined = " ".join(split_sentences(text))
    assert _WS.sub(" ", joined).strip() == _WS.sub(" ", text).strip()


@given(text_strategy)
def test_split_is_pure(text):
    assert split_sentences(text) == split_sentences(text)


@given(text_strategy)
def test_tokenize_idempotent(text):
    once = tokenize(text)
    assert tokenize(" ".join(once)) == once


@given(st.text(min_size=1, max_size=80))
def test_nonempty_sentences_have_tokens(text):
    for sentence in split_sentences(text):
        assert sentence.strip()
        # every surviving sentence yields at least one token unless it is
        # pure non-printable content the tokenizer cannot keep
        if any(ch.isalnum() or not ch.isspace() for ch in sentence):
            assert len(tokenize(sentence)) >= 1
