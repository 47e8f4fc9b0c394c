"""
MaxEnt (binary logistic) sentence finder: flags sentences that state the
minimum or maximum age of the participants. The sparse logistic trainer and
the model text format here are shared with the QA candidate scorer.
"""
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import sparse
from scipy.special import expit

from corpus import Sentence, Token, sentence_from_text
from ctgov_supervision import SentenceExample
from errors import InputFormatError, TrainingError
from utils import minimize_backtracking

FeatureVector = Dict[str, float]

MODEL_VERSION = "1"
POSITIVE = "positive"
NEGATIVE = "negative"
_PROB_EPS = 1e-12


@dataclass(frozen=True)
class MaxEntConfig:
    l2: float = 1.0
    tol: float = 1e-4
    max_iter: int = 500
    seed: int = 13


@dataclass
class MaxEntModel:
    vocabulary: List[str]           # sorted; position = feature id
    weights: np.ndarray
    bias: float
    config: MaxEntConfig = field(default_factory=MaxEntConfig)

    def __post_init__(self):
        self._index = {name: i for i, name in enumerate(self.vocabulary)}

    @property
    def index(self) -> Dict[str, int]:
        return self._index

    def decision(self, features: Mapping[str, float]) -> float:
        total = self.bias
        for name, value in features.items():
            i = self._index.get(name)
            if i is not None:
                total += self.weights[i] * value
        return float(total)

    def probability(self, features: Mapping[str, float]) -> float:
        return float(np.clip(expit(self.decision(features)), _PROB_EPS, 1.0 - _PROB_EPS))

# --------------------------- Features ---------------------------

def letter_ngrams(text: str, orders: Sequence[int] = (2, 3, 4)) -> Iterator[str]:
    text = text.lower()
    for n in orders:
        for i in range(len(text) - n + 1):
            yield f"c{n}:{text[i:i + n]}"


def featurize_tokens(tokens: Sequence[Token]) -> FeatureVector:
    counts: Counter = Counter()
    words = [t.norm for t in tokens]
    for n in range(1, 5):
        for i in range(len(words) - n + 1):
            counts[f"w{n}:{'_'.join(words[i:i + n])}"] += 1
    for tok in tokens:
        counts.update(letter_ngrams(tok.text))
    return {name: float(c) for name, c in counts.items()}


def featurize_sentence(s: Sentence) -> FeatureVector:
    return featurize_tokens(s.tokens)

# --------------------------- Training ---------------------------

def build_vocabulary(vectors: Iterable[Mapping[str, float]]) -> List[str]:
    return sorted({name for vec in vectors for name in vec})


def design_matrix(vectors: Sequence[Mapping[str, float]], index: Mapping[str, int]) -> sparse.csr_matrix:
    rows, cols, data = [], [], []
    for r, vec in enumerate(vectors):
        for name, value in vec.items():
            c = index.get(name)
            if c is not None:
                rows.append(r)
                cols.append(c)
                data.append(value)
    return sparse.csr_matrix((data, (rows, cols)), shape=(len(vectors), len(index)), dtype=np.float64)


def logistic_objective(params: np.ndarray, X: sparse.csr_matrix, y: np.ndarray, l2: float) -> Tuple[float, np.ndarray]:
    """
    Negative log-likelihood plus l2/2 * ||w||^2 and its gradient.
    params[0] is the unregularized bias, params[1:] the feature weights.
    """
    b, w = params[0], params[1:]
    z = X @ w + b
    value = float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    residual = expit(z) - y
    grad = np.empty_like(params)
    grad[0] = residual.sum()
    grad[1:] = X.T @ residual + l2 * w
    return value, grad


def train_logistic(
    vectors: Sequence[Mapping[str, float]],
    labels: Sequence[int],
    config: MaxEntConfig = MaxEntConfig(),
    name: str = "maxent",
) -> MaxEntModel:
    y = np.asarray(labels, dtype=np.float64)
    if len(vectors) == 0:
        raise TrainingError(f"{name}: no training examples")
    if y.min() == y.max():
        which = POSITIVE if y[0] == 1 else NEGATIVE
        raise TrainingError(f"{name}: all {len(y)} training examples are {which}; need both classes")

    vocabulary = build_vocabulary(vectors)
    model = MaxEntModel(vocabulary, np.zeros(len(vocabulary)), 0.0, config)
    X = design_matrix(vectors, model.index)
    result = minimize_backtracking(
        lambda p: logistic_objective(p, X, y, config.l2),
        np.zeros(len(vocabulary) + 1),
        tol=config.tol,
        max_iter=config.max_iter,
    )
    if not result.converged:
        logger.warning("{}: stopped after {} iterations with |grad|={:.3e}", name, result.n_iter, result.grad_norm)
    logger.info("{}: {} examples, {} features, objective {:.4f} after {} iterations",
                name, len(y), len(vocabulary), result.value, result.n_iter)
    model.bias = float(result.x[0])
    model.weights = result.x[1:].copy()
    return model


def train_maxent(examples: Sequence[SentenceExample], config: MaxEntConfig = MaxEntConfig()) -> MaxEntModel:
    vectors = [featurize_sentence(sentence_from_text(ex.text)) for ex in examples]
    labels = [1 if ex.label == POSITIVE else 0 for ex in examples]
    return train_logistic(vectors, labels, config, name="sentfinder")


def classify(model: MaxEntModel, s: Sentence) -> Tuple[str, float]:
    prob = model.probability(featurize_sentence(s))
    return (POSITIVE if prob >= 0.5 else NEGATIVE), prob

# --------------------------- Persistence ---------------------------

def feature_families(vocabulary: Iterable[str]) -> Dict[str, int]:
    return dict(sorted(Counter(name.split(":", 1)[0] for name in vocabulary).items()))


def model_to_lines(model: MaxEntModel) -> List[str]:
    lines = [
        f"version\t{MODEL_VERSION}",
        f"l2\t{model.config.l2!r}",
        f"tol\t{model.config.tol!r}",
        f"max_iter\t{model.config.max_iter}",
        f"seed\t{model.config.seed}",
        f"bias\t{model.bias!r}",
    ]
    lines += [f"family\t{fam}\t{count}" for fam, count in feature_families(model.vocabulary).items()]
    lines.append(f"features\t{len(model.vocabulary)}")
    lines += [f"{i}\t{name}\t{float(w)!r}" for i, (name, w) in enumerate(zip(model.vocabulary, model.weights))]
    return lines


def model_from_lines(lines: Iterator[str], source: str = "model") -> MaxEntModel:
    """Consume one model block from `lines`, stopping after its last weight line."""
    header: Dict[str, str] = {}
    try:
        for line in lines:
            key, _, rest = line.rstrip("\n").partition("\t")
            if key == "family":
                continue
            if key == "features":
                n = int(rest)
                break
            header[key] = rest
        else:
            raise InputFormatError(f"{source}: missing features block", field="features")
        if header.get("version") != MODEL_VERSION:
            raise InputFormatError(f"{source}: unsupported model version {header.get('version')!r}", field="version")
        vocabulary, weights = [], np.zeros(n)
        for i in range(n):
            fid, name, weight = next(lines).rstrip("\n").split("\t")
            if int(fid) != i:
                raise InputFormatError(f"{source}: feature ids out of order at {fid}", field="features")
            vocabulary.append(name)
            weights[i] = float(weight)
        config = MaxEntConfig(l2=float(header["l2"]), tol=float(header["tol"]),
                              max_iter=int(header["max_iter"]), seed=int(header["seed"]))
        return MaxEntModel(vocabulary, weights, float(header["bias"]), config)
    except (KeyError, ValueError, StopIteration) as e:
        raise InputFormatError(f"{source}: corrupt model file ({e!r})", field="model")


def save_maxent(model: MaxEntModel, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# maxent sentence finder\n")
        f.write("\n".join(model_to_lines(model)) + "\n")
    logger.info("Saved sentence finder to {}", path)


def load_maxent(path: Union[str, Path]) -> MaxEntModel:
    with open(path, "r", encoding="utf-8") as f:
        lines = (line for line in f if not line.startswith("#"))
        return model_from_lines(lines, source=str(path))
