import math

import pytest

from conftest import document_from, sent
from corpus import tokenize
from errors import InputFormatError
from passage_baseline import (
    Passage,
    PassageCandidate,
    ProximityConfig,
    RangePatternAnswerer,
    compile_pattern,
    extract_age_passage,
    load_patterns,
    proximity_score,
    retrieve_passages,
    validate_candidates,
)
from qa_scorer import AgeQuestion


@pytest.fixture(scope="module")
def patterns():
    return load_patterns()


def one_sentence(text):
    return document_from([("method", [text])])


@pytest.mark.parametrize("position,expected", [(6, math.exp(-1)), (5, 1.0), (10, math.exp(-25))])
def test_proximity_kernel(position, expected):
    passage = Passage(0, 10, 10, (5,))
    assert proximity_score(PassageCandidate(position, 20, "p"), passage) == pytest.approx(expected, abs=1e-12)


def test_proximity_is_the_mean_over_query_terms():
    passage = Passage(0, 10, 10, (2, 6))
    score = proximity_score(PassageCandidate(3, 20, "p"), passage)
    assert score == pytest.approx((math.exp(-1) + math.exp(-9)) / 2)
    assert proximity_score(PassageCandidate(3, 20, "p"), Passage(0, 10, 10, ())) == 0.0


def test_wider_kernel_decays_slower():
    passage = Passage(0, 10, 10, (5,))
    cand = PassageCandidate(7, 20, "p")
    assert proximity_score(cand, passage, ProximityConfig(sigma=1.0)) < \
        proximity_score(cand, passage, ProximityConfig(sigma=4.0))
    with pytest.raises(ValueError):
        ProximityConfig(sigma=0.0)


def test_passages_are_centred_and_clamped():
    doc = one_sentence("a b c d e f g h i j k l m n age p q r s t")
    passages = retrieve_passages(doc, sizes=(10, 20, 30))
    assert [(p.start, p.size, p.end, p.query_positions) for p in passages] == [
        (9, 10, 19, (14,)),
        (0, 20, 20, (14,)),
        (0, 30, 20, (14,)),
    ]


def test_overlapping_windows_are_deduplicated():
    passages = retrieve_passages(one_sentence("age b c years"), sizes=(10,))
    assert [(p.start, p.query_positions) for p in passages] == [(0, (0, 3))]
    assert retrieve_passages(one_sentence("Participants smoked daily."), sizes=(10,)) == []


@pytest.mark.parametrize("text,kind,values", [
    ("Participants were older than 17 years", "min", [17]),
    ("Participants were greater than 120 years", "min", []),
    ("Participants were aged 18-23 years", "max", [23]),
    ("Participants were aged 18-23 years", "min", [18]),
    ("Participants had age > 17", "min", [17]),
    ("Participants younger than 9 years", "max", []),
])
def test_validated_candidates(patterns, text, kind, values):
    tokens = tokenize(text)
    window = Passage(0, len(tokens), len(tokens), ())
    assert [c.value for c in validate_candidates(window, kind, patterns, tokens)] == values


def test_extract_from_range(patterns):
    doc = one_sentence("Participants were aged 18-24 years.")
    low = extract_age_passage(doc, "min", patterns=patterns)
    high = extract_age_passage(doc, "max", patterns=patterns)
    assert (low.value, high.value) == (18, 24)
    assert low.confidence == pytest.approx((math.exp(-1) + math.exp(-9)) / 2)
    assert doc.sentences()[0].text[slice(*low.span)] == "18"


def test_equal_scores_prefer_the_earlier_candidate(patterns):
    doc = one_sentence("30 or older age at least 40")
    assert extract_age_passage(doc, "min", patterns=patterns).value == 30


def test_nothing_to_extract(patterns):
    assert extract_age_passage(one_sentence("Participants were at least 18."), "min", patterns=patterns) is None
    assert extract_age_passage(one_sentence("Participants were young adults."), "min", patterns=patterns) is None


def test_shipped_pattern_table(patterns):
    assert len(patterns) == 22
    assert sum(p.kind == "min" for p in patterns) == 11
    assert compile_pattern("min", "≥ X", "X").template == (">=", "X")


@pytest.mark.parametrize("line", ["min\tat least X\n", "min\tat least\tX\n", "median\tat least X\tX\n"])
def test_malformed_pattern_table(tmp_path, line):
    path = tmp_path / "patterns.tsv"
    path.write_text("# comment\n" + line, encoding="utf-8")
    with pytest.raises(InputFormatError):
        load_patterns(path)


def test_range_pattern_answerer():
    answerer = RangePatternAnswerer()
    s = sent("Participants were aged 18-24 years.")
    low = answerer.answer(s, AgeQuestion("min"))
    assert (low.value, low.confidence) == (18, 1.0)
    assert answerer.answer(s, AgeQuestion("max")).value == 24
    assert answerer.answer(sent("Scores fell from 30-20 points."), AgeQuestion("min")) is None
    assert answerer.answer(sent("Weights of 100-130 kg."), AgeQuestion("max")) is None
    assert answerer.answer(sent("Participants were between 18 and 24 years."), AgeQuestion("min")) is None
