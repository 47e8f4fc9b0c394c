import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from conftest import AGE_CLAUSE, document_from
from corpus import tokenize, tokens_from_texts
from crf_tagger import (
    CrfConfig,
    CrfModel,
    best_path,
    crf_objective,
    extract_age_crf,
    featurize_sequence,
    forward_backward,
    load_crf,
    log_partition_backward,
    prepare_training,
    save_crf,
    tag,
    token_marginals,
    train_crf,
    viterbi_decode,
)
from ctgov_supervision import BioSequence
from errors import TrainingError
from utils import minimize_backtracking


def age_clause_sequence() -> BioSequence:
    tokens = tokenize(AGE_CLAUSE)
    labels = ["B" if t.text == "21" else "O" for t in tokens]
    return BioSequence(tuple(tokens), tuple(labels), "min", text=AGE_CLAUSE)


def path_score(start, transitions, end, emissions, path):
    score = start[path[0]] + end[path[-1]] + sum(emissions[i, y] for i, y in enumerate(path))
    return score + sum(transitions[a, b] for a, b in zip(path, path[1:]))


# --------------------------- Features ---------------------------

def test_feature_templates_around_a_number():
    tokens = tokenize("at least 21 years of age")
    vec = featurize_sequence(tokens)[2]
    for name in ("bias", "w0:21", "w-1:least", "w-2:at", "w+1:years", "w+2:of",
                 "w-1|w0:least|21", "w0|w+1:21|years", "w-1|w0|w+1:least|21|years", "shape0:AllDigits"):
        assert vec[name] == 1.0


def test_single_token_sees_sentinels():
    [vec] = featurize_sequence(tokenize("21"))
    assert "w-1:<s>" in vec
    assert "w+1:</s>" in vec
    assert "w-2|w-1|w0:<s>|<s>|21" in vec


def test_pos_tags_replace_shapes():
    vec = featurize_sequence(tokens_from_texts(["at", "least", "21"]), pos=["IN", "JJS", "CD"])[2]
    assert "pos0:CD" in vec
    assert "pos-1:JJS" in vec
    assert not any(name.startswith("shape") for name in vec)

# --------------------------- Inference ---------------------------

def test_exact_inference_matches_brute_force():
    rng = np.random.default_rng(5)
    for trial in range(120):
        n = int(rng.integers(1, 7)) if trial < 110 else 8
        start, end = rng.normal(size=3), rng.normal(size=3)
        transitions, emissions = rng.normal(size=(3, 3)), rng.normal(size=(n, 3)) * 2
        paths = list(itertools.product(range(3), repeat=n))
        scores = np.array([path_score(start, transitions, end, emissions, p) for p in paths])
        log_z = logsumexp(scores)

        assert tuple(best_path(start, transitions, end, emissions)) == paths[int(np.argmax(scores))]

        alpha, beta, fwd = forward_backward(start, transitions, end, emissions[None])
        assert fwd[0] == pytest.approx(log_z, abs=1e-9)
        assert log_partition_backward(start, emissions[None], beta)[0] == pytest.approx(log_z, abs=1e-9)

        weights = np.exp(scores - log_z)
        expected = np.zeros((n, 3))
        for p, w in zip(paths, weights):
            expected[np.arange(n), list(p)] += w
        assert np.allclose(np.exp(alpha[0] + beta[0] - fwd[0]), expected, atol=1e-9)


def test_ties_resolve_to_the_smallest_labelling():
    zeros = np.zeros(3)
    assert best_path(zeros, np.zeros((3, 3)), zeros, np.zeros((4, 3))) == [0, 0, 0, 0]
    emissions = np.array([[0.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    assert best_path(zeros, np.zeros((3, 3)), zeros, emissions) == [1, 0]


def test_zero_model_tags_everything_b_with_uniform_marginals():
    model = CrfModel.zeros("min", [])
    tokens = tokenize("aged 18-23 years")
    assert viterbi_decode(model, tokens) == ["B"] * 5
    assert np.allclose(token_marginals(model, tokens), 1 / 3)
    assert tag(model, []).labels == ()

# --------------------------- Training ---------------------------

def test_objective_gradient_matches_finite_differences():
    seqs = [
        age_clause_sequence(),
        BioSequence(tuple(tokenize("aged 18-65 years")), ("O", "B", "O", "O", "O"), "min"),
        BioSequence(tuple(tokenize("age >= 30 years")), ("O", "O", "B", "O"), "min"),
        BioSequence(tuple(tokenize("older than 40 years")), ("O", "O", "B", "I"), "min"),
    ]
    model, groups = prepare_training(seqs, "min")
    n_features = len(model.vocabulary)
    rng = np.random.default_rng(2)
    params = rng.normal(scale=0.3, size=model.n_params())
    _, grad = crf_objective(params, groups, n_features, 0.5)
    probes = list(rng.choice(n_features * 3, size=12, replace=False)) + list(range(n_features * 3, model.n_params()))
    eps = 1e-6
    for j in probes:
        step = np.zeros_like(params)
        step[j] = eps
        numeric = (crf_objective(params + step, groups, n_features, 0.5)[0] -
                   crf_objective(params - step, groups, n_features, 0.5)[0]) / (2 * eps)
        assert abs(numeric - grad[j]) <= 1e-5 * max(1.0, abs(grad[j]))


def test_training_objective_never_increases():
    model, groups = prepare_training([age_clause_sequence()] * 5, "min")
    result = minimize_backtracking(lambda p: crf_objective(p, groups, len(model.vocabulary), 1.0),
                                   model.flat(), tol=1e-3, max_iter=60)
    assert all(b <= a for a, b in zip(result.history, result.history[1:]))
    assert result.history[-1] < result.history[0]


def test_training_recovers_the_gold_labelling():
    seq = age_clause_sequence()
    model = train_crf([seq] * 50, "min")
    assert viterbi_decode(model, seq.tokens) == list(seq.labels)


def test_training_is_deterministic():
    seqs = [age_clause_sequence()] * 10
    a = train_crf(seqs, "min", CrfConfig(max_iter=40))
    b = train_crf(seqs, "min", CrfConfig(max_iter=40))
    assert np.array_equal(a.flat(), b.flat())


def test_training_rejects_bad_input():
    with pytest.raises(TrainingError):
        train_crf([], "min")
    bad = BioSequence(tuple(tokenize("aged 21")), ("O", "O"), "min")
    with pytest.raises(TrainingError):
        train_crf([bad], "min")

# --------------------------- Extraction ---------------------------

def hand_built_model() -> CrfModel:
    model = CrfModel.zeros("min", ["bias", "w0:18", "w0:30"])
    model.state[:] = [[0.0, 0.0, 5.0], [5.2, 0.0, -5.0], [6.0, 0.0, -5.0]]
    return model


def test_extraction_takes_the_most_confident_b_token():
    doc = document_from([("method", ["Participants aged 18 or 30 years were eligible."])])
    answer = extract_age_crf(hand_built_model(), doc)
    assert answer.value == 30
    assert answer.kind == "min"
    assert answer.confidence == pytest.approx(np.exp(6) / (np.exp(6) + 2))


def test_extraction_skips_sentences_without_keywords():
    doc = document_from([("method", ["Participants numbered 18 or 30."])])
    assert extract_age_crf(hand_built_model(), doc) is None


def test_extraction_kind_must_match_model():
    doc = document_from([("method", ["Participants aged 18 years."])])
    with pytest.raises(ValueError):
        extract_age_crf(hand_built_model(), doc, kind="max")


def test_trained_model_extracts_the_clause_age():
    model = train_crf([age_clause_sequence()] * 50, "min")
    doc = document_from([("abstract", ["Patients undergo surgery."]), ("method", [AGE_CLAUSE])])
    answer = extract_age_crf(model, doc, kind="min")
    assert answer.value == 21
    assert answer.sentence_index == 1


def test_save_and_load_are_exact(tmp_path):
    model = train_crf([age_clause_sequence()] * 5, "min", CrfConfig(max_iter=20))
    path = tmp_path / "crf_min.model"
    save_crf(model, path)
    loaded = load_crf(path)
    assert loaded.kind == "min"
    assert loaded.vocabulary == model.vocabulary
    assert np.array_equal(loaded.flat(), model.flat())
    assert loaded.config == model.config
