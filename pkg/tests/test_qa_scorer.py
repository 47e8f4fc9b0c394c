import numpy as np
import pytest

from conftest import SMOKERS_18_23, sent
from corpus import sentence_from_text
from ctgov_supervision import QaPair
from errors import TrainingError
from maxent_sentfinder import MaxEntModel, design_matrix, logistic_objective
from qa_scorer import (
    AgeQuestion,
    QaModel,
    enumerate_candidates,
    featurize_candidate,
    load_qa,
    save_qa,
    train_qa,
)

_TEMPLATES = [
    "Participants aged {lo}-{hi} years were enrolled.",
    "Smokers aged {lo} to {hi} years",
    "Healthy volunteers between {lo} and {hi} years of age, {n} in total",
    "Adults ({lo}-{hi} years) with at least {n} visits",
]


def range_pairs(n, seed):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        lo = int(rng.integers(12, 45))
        hi = lo + int(rng.integers(3, 40))
        text = _TEMPLATES[i % len(_TEMPLATES)].format(lo=lo, hi=hi, n=int(rng.integers(2, 9)))
        lo_at = text.index(str(lo))
        hi_at = text.index(str(hi), lo_at + len(str(lo)))
        pairs.append(QaPair(text, "min", lo, (lo_at, lo_at + len(str(lo)))))
        pairs.append(QaPair(text, "max", hi, (hi_at, hi_at + len(str(hi)))))
    return pairs


@pytest.fixture(scope="module")
def range_model():
    return train_qa(range_pairs(500, seed=1))


def test_question_text():
    assert AgeQuestion("min").text == "what is the min age of the participants?"
    with pytest.raises(ValueError):
        AgeQuestion("median")


def test_every_integer_token_is_a_candidate():
    assert [c.value for c in enumerate_candidates(sent(SMOKERS_18_23))] == [83, 18, 23]
    assert enumerate_candidates(sent("No numbers here.")) == []


def test_range_and_comparison_features():
    lo, hi = enumerate_candidates(sent("aged 18-23 years"))
    assert "rangeLeft" in lo.features and "rangeRight" not in lo.features
    assert "rangeRight" in hi.features and "rangeLeft" not in hi.features
    lo, hi = enumerate_candidates(sent("aged 18 to 23 years"))
    assert "rangeLeft" in lo.features and "rangeRight" in hi.features
    [c] = enumerate_candidates(sent("age >= 18 years"))
    assert "cmpLeft:>=" in c.features
    assert c.features["kwdist:1"] == 1.0
    assert "kwside:right" in c.features


def test_keyword_distance_without_keywords():
    [c] = enumerate_candidates(sent("We enrolled 40 smokers."))
    assert "kwdist:none" in c.features


def test_scorer_ranks_range_ends_by_kind(range_model):
    held_out = range_pairs(200, seed=99)
    right = 0
    for min_pair, max_pair in zip(held_out[::2], held_out[1::2]):
        s = sent(min_pair.context)
        lo, hi = min_pair.answer_value, max_pair.answer_value
        for pair, q in ((min_pair, AgeQuestion("min")), (max_pair, AgeQuestion("max"))):
            scored = {c.value: prob for c, prob in range_model.answer_all(s, q)}
            other = hi if pair is min_pair else lo
            right += scored[pair.answer_value] > scored[other]
    assert right >= 0.99 * len(held_out)


def test_answers_unseen_range(range_model):
    s = sent("Children aged 6-12 years old were recruited.")
    assert range_model.answer(s, AgeQuestion("min")).value == 6
    assert range_model.answer(s, AgeQuestion("max")).value == 12


def test_answer_is_always_an_integer_token(range_model):
    s = sent(SMOKERS_18_23, index=4)
    for kind in ("min", "max"):
        ans = range_model.answer(s, AgeQuestion(kind))
        assert s.text[slice(*ans.span)] == str(ans.value)
        assert ans.sentence_index == 4
        assert ans.evidence == SMOKERS_18_23
        assert 0.0 < ans.confidence < 1.0


def test_no_digits_no_answer(range_model):
    assert range_model.answer(sent("Participants were young adults."), AgeQuestion("min")) is None


def test_ties_go_to_the_earliest_candidate():
    flat = MaxEntModel([], np.zeros(0), 0.0)
    model = QaModel({"min": flat, "max": flat})
    ans = model.answer(sent("aged 18-23 years"), AgeQuestion("max"))
    assert ans.value == 18
    assert ans.confidence == 0.5


def test_kind_without_positives_is_rejected():
    with pytest.raises(TrainingError, match="qa_max"):
        train_qa([p for p in range_pairs(20, seed=3) if p.kind == "min"])


def test_save_and_load_keep_answers(range_model, tmp_path):
    path = tmp_path / "qa.model"
    save_qa(range_model, path)
    loaded = load_qa(path)
    s = sent(SMOKERS_18_23)
    for kind in ("min", "max"):
        a = range_model.answer(s, AgeQuestion(kind))
        b = loaded.answer(s, AgeQuestion(kind))
        assert (a.value, a.confidence) == (b.value, b.confidence)


def test_training_is_deterministic():
    pairs = range_pairs(60, seed=5)
    a, b = train_qa(pairs), train_qa(pairs)
    for kind in ("min", "max"):
        assert a.scorers[kind].vocabulary == b.scorers[kind].vocabulary
        assert np.array_equal(a.scorers[kind].weights, b.scorers[kind].weights)
        assert a.scorers[kind].bias == b.scorers[kind].bias


def test_candidate_objective_gradient_matches_finite_differences(range_model):
    q = AgeQuestion("max")
    vectors, labels = [], []
    for pair in range_pairs(30, seed=11)[1::2]:
        s = sentence_from_text(pair.context)
        for cand in enumerate_candidates(s):
            vectors.append(featurize_candidate(cand, s, q))
            labels.append(float((cand.start, cand.end) == pair.answer_span))
    scorer = range_model.scorers["max"]
    X = design_matrix(vectors, scorer.index)
    y = np.array(labels)
    rng = np.random.default_rng(21)
    h = 1e-6
    for _ in range(10):
        params = rng.normal(scale=0.5, size=X.shape[1] + 1)
        direction = rng.normal(size=params.shape)
        _, grad = logistic_objective(params, X, y, 1.0)
        up, _ = logistic_objective(params + h * direction, X, y, 1.0)
        down, _ = logistic_objective(params - h * direction, X, y, 1.0)
        numeric = (up - down) / (2 * h)
        assert numeric == pytest.approx(grad @ direction, rel=1e-4, abs=1e-6)
