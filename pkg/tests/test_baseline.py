"""Phrase-lexicon baseline: lexicon contents, longest match, tie-breaking."""

import numpy as np
import pytest

from medspan.baseline import default_lexicon, load_lexicon, phrase_extract
from medspan.data import ATTRIBUTES, CLASSES


def test_lexicon_structure():
    lex = default_lexicon()
    assert set(lex) == set(ATTRIBUTES)
    for attr in ATTRIBUTES:
        assert set(lex[attr]) == set(CLASSES[attr])
        for cls, phrases in lex[attr].items():
            for phrase in phrases:
                assert isinstance(phrase, list) and all(isinstance(t, str) for t in phrase)


def test_lexicon_known_entries():
    lex = default_lexicon()
    assert ["twice", "a", "day"] in lex["frequency"]["Twice a day"]
    assert ["every", "6", "hours"] in lex["frequency"]["Every six hours"]
    assert ["pill"] in lex["route"]["Pill"]
    assert ["patch"] in lex["route"]["Medicated patch"]
    assert ["put", "you", "on"] in lex["change"]["Take"]
    assert ["reduce"] in lex["change"]["Decrease"]
    # classes with no published phrases stay empty, they are never matched
    assert lex["frequency"]["Daily"] == []
    assert lex["route"]["Inhaler"] == []
    for attr in ATTRIBUTES:
        assert lex[attr]["None"] == [] and lex[attr]["Other"] == []


def test_longest_match_wins():
    tokens = "you should take it twice a day from now".split()
    mask, cls = phrase_extract(tokens, "frequency")
    assert cls == "Twice a day"
    np.testing.assert_array_equal(mask, [0, 0, 0, 0, 1, 1, 1, 0, 0])
    # "take" also matches the change lexicon
    mask, cls = phrase_extract(tokens, "change")
    assert cls == "Take"
    assert mask[2] == 1 and sum(mask) == 1


def test_ties_break_to_earliest_occurrence():
    tokens = "stop means stop".split()
    mask, cls = phrase_extract(tokens, "change")
    assert cls == "Stop"
    np.testing.assert_array_equal(mask, [1, 0, 0])


def test_matching_is_case_insensitive_whole_token():
    mask, cls = phrase_extract(["Take", "the", "PILL"], "route")
    assert cls == "Pill" and mask == [0, 0, 1]
    # substrings must not match: "pillow" is not "pill"
    mask, cls = phrase_extract(["fluff", "the", "pillow"], "route")
    assert cls is None and sum(mask) == 0


def test_no_match_returns_empty():
    mask, cls = phrase_extract("nothing relevant here".split(), "frequency")
    assert cls is None
    assert mask == [0, 0, 0]


def test_extraction_and_class_are_coupled():
    """Whenever a phrase matches, the mask covers exactly that phrase, so a
    correct match yields positive token overlap with any gold span that
    contains the phrase."""
    tokens = "we will increase the dose".split()
    mask, cls = phrase_extract(tokens, "change")
    assert cls == "Increase"
    start = tokens.index("increase")
    assert mask[start] == 1 and sum(mask) == 1


def test_custom_lexicon_file(tmp_path):
    path = tmp_path / "lex.tsv"
    path.write_text(
        "frequency\tEvery week\tonce weekly\n"
        "change\tStop\tdiscontinue\n"
    )
    lex = load_lexicon(path)
    mask, cls = phrase_extract("please discontinue it".split(), "change", lex)
    assert cls == "Stop" and mask == [0, 1, 0]
    mask, cls = phrase_extract("take it once weekly".split(), "frequency", lex)
    assert cls == "Every week" and mask == [0, 0, 1, 1]


def test_deterministic_and_independent():
    tokens = "take one tablet every morning".split()
    first = phrase_extract(tokens, "frequency")
    for _ in range(5):
        assert phrase_extract(tokens, "frequency") == first
