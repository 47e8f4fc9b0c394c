"""
Linear-chain CRF over B/I/O labels, one model per age kind.

Inference is exact: Viterbi for the best labelling (ties resolved towards the
lexicographically smallest sequence under B < I < O) and log-space
forward-backward for per-token marginals. Training minimizes the
L2-regularized negative conditional log-likelihood; sequences of equal length
are batched so the recursions run vectorized over the batch.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import sparse
from scipy.special import logsumexp

from corpus import AgeKind, Document, Token, parse_integer_token
from ctgov_supervision import BioSequence, validate_bio
from errors import InputFormatError, TrainingError
from maxent_sentfinder import FeatureVector, design_matrix
from qa_scorer import AgeAnswer
from utils import minimize_backtracking

LABELS = ("B", "I", "O")
LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}
N_LABELS = len(LABELS)
MODEL_VERSION = "1"

BOS, EOS = "<s>", "</s>"

# Template offsets; applied to words and again to tags
_UNIGRAMS = (-2, -1, 0, 1, 2)
_NGRAMS = ((-1, 0), (0, 1), (-2, -1, 0), (-1, 0, 1), (0, 1, 2))


@dataclass(frozen=True)
class CrfConfig:
    l2: float = 1.0
    tol: float = 1e-3
    max_iter: int = 200
    seed: int = 13


@dataclass
class CrfModel:
    kind: str
    vocabulary: List[str]
    state: np.ndarray           # (n_features, 3)
    transitions: np.ndarray     # (3, 3), [previous, current]
    start: np.ndarray           # (3,)
    end: np.ndarray             # (3,)
    config: CrfConfig = field(default_factory=CrfConfig)

    def __post_init__(self):
        self._index = {name: i for i, name in enumerate(self.vocabulary)}

    @property
    def index(self) -> Dict[str, int]:
        return self._index

    @classmethod
    def zeros(cls, kind: str, vocabulary: List[str], config: CrfConfig = CrfConfig()) -> "CrfModel":
        return cls(kind, vocabulary, np.zeros((len(vocabulary), N_LABELS)),
                   np.zeros((N_LABELS, N_LABELS)), np.zeros(N_LABELS), np.zeros(N_LABELS), config)

    def n_params(self) -> int:
        return self.state.size + N_LABELS * N_LABELS + 2 * N_LABELS

    def flat(self) -> np.ndarray:
        return np.concatenate([self.state.ravel(), self.transitions.ravel(), self.start, self.end])

    def set_flat(self, params: np.ndarray) -> None:
        self.state, self.transitions, self.start, self.end = unpack_params(params, len(self.vocabulary))

    def emissions(self, features: Sequence[FeatureVector]) -> np.ndarray:
        if not features:
            return np.zeros((0, N_LABELS))
        return design_matrix(features, self._index) @ self.state


@dataclass(frozen=True)
class TaggedSequence:
    tokens: Tuple[Token, ...]
    labels: Tuple[str, ...]
    confidences: Tuple[float, ...]      # marginal probability of each predicted label


def unpack_params(params: np.ndarray, n_features: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    k = n_features * N_LABELS
    state = params[:k].reshape(n_features, N_LABELS)
    transitions = params[k:k + N_LABELS * N_LABELS].reshape(N_LABELS, N_LABELS)
    k += N_LABELS * N_LABELS
    start = params[k:k + N_LABELS]
    end = params[k + N_LABELS:k + 2 * N_LABELS]
    return state.copy(), transitions.copy(), start.copy(), end.copy()

# --------------------------- Features ---------------------------

def _at(values: Sequence[str], i: int) -> str:
    if i < 0:
        return BOS
    if i >= len(values):
        return EOS
    return values[i]


def _offset(o: int) -> str:
    return "0" if o == 0 else f"{o:+d}"


def _templates(family: str, values: Sequence[str], i: int, out: FeatureVector) -> None:
    for o in _UNIGRAMS:
        out[f"{family}{_offset(o)}:{_at(values, i + o)}"] = 1.0
    for offsets in _NGRAMS:
        name = "|".join(f"{family}{_offset(o)}" for o in offsets)
        out[f"{name}:{'|'.join(_at(values, i + o) for o in offsets)}"] = 1.0


def featurize_sequence(tokens: Sequence[Token], pos: Optional[Sequence[str]] = None) -> List[FeatureVector]:
    """Word templates at offsets -2..+2 plus bigrams and trigrams, repeated over POS tags or word shapes."""
    words = [t.norm for t in tokens]
    family, tags = ("pos", list(pos)) if pos is not None else ("shape", [t.shape for t in tokens])
    features = []
    for i in range(len(tokens)):
        vec: FeatureVector = {"bias": 1.0}
        _templates("w", words, i, vec)
        _templates(family, tags, i, vec)
        features.append(vec)
    return features

# --------------------------- Inference ---------------------------

def forward_backward(start: np.ndarray, transitions: np.ndarray, end: np.ndarray,
                     emissions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Log-space recursions over a batch of equal-length sequences.
    emissions: (m, n, 3). Returns alpha, beta (both (m, n, 3)) and log Z (m,).
    """
    m, n, _ = emissions.shape
    alpha = np.empty_like(emissions)
    beta = np.empty_like(emissions)
    alpha[:, 0] = start + emissions[:, 0]
    for i in range(1, n):
        alpha[:, i] = logsumexp(alpha[:, i - 1, :, None] + transitions[None], axis=1) + emissions[:, i]
    beta[:, n - 1] = end
    for i in range(n - 2, -1, -1):
        beta[:, i] = logsumexp(transitions[None] + (emissions[:, i + 1] + beta[:, i + 1])[:, None, :], axis=2)
    log_z = logsumexp(alpha[:, n - 1] + end, axis=1)
    return alpha, beta, log_z


def log_partition_backward(start: np.ndarray, emissions: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return logsumexp(start + emissions[:, 0] + beta[:, 0], axis=1)


def best_path(start: np.ndarray, transitions: np.ndarray, end: np.ndarray, emissions: np.ndarray) -> List[int]:
    n = emissions.shape[0]
    if n == 0:
        return []
    # suffix[i, y]: best score of positions i..n-1 given label y at i
    suffix = np.empty((n, N_LABELS))
    suffix[n - 1] = emissions[n - 1] + end
    for i in range(n - 2, -1, -1):
        suffix[i] = emissions[i] + np.max(transitions + suffix[i + 1][None, :], axis=1)
    # np.argmax returns the first maximum, so the forward trace picks the smallest label among ties
    path = [int(np.argmax(start + suffix[0]))]
    for i in range(1, n):
        path.append(int(np.argmax(transitions[path[-1]] + suffix[i])))
    return path


def viterbi_decode(model: CrfModel, tokens: Sequence[Token], pos: Optional[Sequence[str]] = None) -> List[str]:
    emissions = model.emissions(featurize_sequence(tokens, pos))
    return [LABELS[y] for y in best_path(model.start, model.transitions, model.end, emissions)]


def token_marginals(model: CrfModel, tokens: Sequence[Token], pos: Optional[Sequence[str]] = None) -> np.ndarray:
    """(n, 3) array of per-position label probabilities, columns in B, I, O order."""
    if not tokens:
        return np.zeros((0, N_LABELS))
    emissions = model.emissions(featurize_sequence(tokens, pos))[None]
    alpha, beta, log_z = forward_backward(model.start, model.transitions, model.end, emissions)
    return np.exp(alpha[0] + beta[0] - log_z[0])


def tag(model: CrfModel, tokens: Sequence[Token], pos: Optional[Sequence[str]] = None) -> TaggedSequence:
    labels = viterbi_decode(model, tokens, pos)
    marginals = token_marginals(model, tokens, pos)
    confidences = tuple(float(marginals[i, LABEL_INDEX[label]]) for i, label in enumerate(labels))
    return TaggedSequence(tuple(tokens), tuple(labels), confidences)


def extract_age_crf(model: CrfModel, document: Document,
                    kind: Optional[Union[AgeKind, str]] = None) -> Optional[AgeAnswer]:
    """Highest B-marginal integer token over every age/year keyword sentence in the document."""
    if kind is not None and AgeKind(kind).value != model.kind:
        raise ValueError(f"model extracts {model.kind} ages, asked for {AgeKind(kind).value}")
    best: Optional[AgeAnswer] = None
    for s in document.sentences():
        if not s.has_keyword:
            continue
        tagged = tag(model, s.tokens)
        for i, (tok, label) in enumerate(zip(s.tokens, tagged.labels)):
            value = parse_integer_token(tok)
            if label != "B" or value is None:
                continue
            confidence = tagged.confidences[i]
            if best is None or confidence > best.confidence:
                best = AgeAnswer(value=value, confidence=confidence, kind=model.kind,
                                 sentence_index=s.index, span=(tok.start, tok.end), evidence=s.text)
    return best

# --------------------------- Training ---------------------------

@dataclass
class _LengthGroup:
    X: sparse.csr_matrix        # (m * n, n_features), sequence-major rows
    labels: np.ndarray          # (m, n) label ids
    m: int
    n: int


def _prepare(sequences: Sequence[BioSequence], index: Dict[str, int]) -> List[_LengthGroup]:
    by_length: Dict[int, List[BioSequence]] = defaultdict(list)
    for seq in sequences:
        if seq.tokens:
            by_length[len(seq.tokens)].append(seq)
    groups = []
    for n in sorted(by_length):
        batch = by_length[n]
        features = [vec for seq in batch for vec in featurize_sequence(seq.tokens, seq.pos)]
        labels = np.array([[LABEL_INDEX[label] for label in seq.labels] for seq in batch], dtype=np.int64)
        groups.append(_LengthGroup(design_matrix(features, index), labels, len(batch), n))
    return groups


def crf_objective(params: np.ndarray, groups: Sequence[_LengthGroup], n_features: int,
                  l2: float) -> Tuple[float, np.ndarray]:
    """Negative conditional log-likelihood plus l2/2 * ||params||^2, with gradient."""
    state, transitions, start, end = unpack_params(params, n_features)
    g_state = np.zeros_like(state)
    g_trans = np.zeros_like(transitions)
    g_start = np.zeros(N_LABELS)
    g_end = np.zeros(N_LABELS)
    value = 0.0
    eye = np.eye(N_LABELS)

    for g in groups:
        emissions = (g.X @ state).reshape(g.m, g.n, N_LABELS)
        alpha, beta, log_z = forward_backward(start, transitions, end, emissions)
        Y = g.labels

        gold = start[Y[:, 0]] + end[Y[:, -1]]
        gold = gold + np.take_along_axis(emissions, Y[:, :, None], axis=2)[:, :, 0].sum(axis=1)
        if g.n > 1:
            gold = gold + transitions[Y[:, :-1], Y[:, 1:]].sum(axis=1)
        value += float(log_z.sum() - gold.sum())

        marginals = np.exp(alpha + beta - log_z[:, None, None])
        observed = eye[Y]
        g_state += g.X.T @ (marginals - observed).reshape(g.m * g.n, N_LABELS)
        g_start += marginals[:, 0].sum(axis=0) - observed[:, 0].sum(axis=0)
        g_end += marginals[:, -1].sum(axis=0) - observed[:, -1].sum(axis=0)
        for i in range(1, g.n):
            pair = np.exp(alpha[:, i - 1, :, None] + transitions[None]
                          + (emissions[:, i] + beta[:, i])[:, None, :] - log_z[:, None, None])
            g_trans += pair.sum(axis=0)
            np.add.at(g_trans, (Y[:, i - 1], Y[:, i]), -1.0)

    grad = np.concatenate([g_state.ravel(), g_trans.ravel(), g_start, g_end]) + l2 * params
    value += 0.5 * l2 * float(params @ params)
    return value, grad


def prepare_training(sequences: Sequence[BioSequence], kind: Union[AgeKind, str],
                     config: CrfConfig = CrfConfig()) -> Tuple[CrfModel, List[_LengthGroup]]:
    """Zero model over the training vocabulary plus the batched training data."""
    vocabulary = sorted({name for seq in sequences
                         for vec in featurize_sequence(seq.tokens, seq.pos) for name in vec})
    model = CrfModel.zeros(AgeKind(kind).value, vocabulary, config)
    return model, _prepare(sequences, model.index)


def train_crf(sequences: Sequence[BioSequence], kind: Union[AgeKind, str],
              config: CrfConfig = CrfConfig()) -> CrfModel:
    if not sequences:
        raise TrainingError(f"crf_{AgeKind(kind).value}: no training sequences")
    for i, seq in enumerate(sequences):
        if len(seq.labels) != len(seq.tokens) or not validate_bio(seq.labels):
            raise TrainingError(f"crf_{AgeKind(kind).value}: sequence {i} violates the BIO labelling rules")
    model, groups = prepare_training(sequences, kind, config)
    result = minimize_backtracking(
        lambda p: crf_objective(p, groups, len(model.vocabulary), config.l2),
        model.flat(),
        tol=config.tol,
        max_iter=config.max_iter,
    )
    name = f"crf_{model.kind}"
    if not result.converged:
        logger.warning("{}: stopped after {} iterations with |grad|={:.3e}", name, result.n_iter, result.grad_norm)
    logger.info("{}: {} sequences, {} features, objective {:.4f} after {} iterations",
                name, len(sequences), len(model.vocabulary), result.value, result.n_iter)
    model.set_flat(result.x)
    return model

# --------------------------- Persistence ---------------------------

def _floats(values: np.ndarray) -> str:
    return "\t".join(repr(float(v)) for v in values)


def save_crf(model: CrfModel, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "# linear-chain crf",
        f"version\t{MODEL_VERSION}",
        f"kind\t{model.kind}",
        f"l2\t{model.config.l2!r}",
        f"tol\t{model.config.tol!r}",
        f"max_iter\t{model.config.max_iter}",
        f"seed\t{model.config.seed}",
        "labels\t" + "\t".join(LABELS),
        f"start\t{_floats(model.start)}",
        f"end\t{_floats(model.end)}",
    ]
    lines += [f"trans\t{prev}\t{_floats(model.transitions[i])}" for i, prev in enumerate(LABELS)]
    lines.append(f"features\t{len(model.vocabulary)}")
    lines += [f"{i}\t{name}\t{_floats(model.state[i])}" for i, name in enumerate(model.vocabulary)]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    logger.info("Saved {} CRF to {}", model.kind, path)


def load_crf(path: Union[str, Path]) -> CrfModel:
    header: Dict[str, List[str]] = {}
    transitions = np.zeros((N_LABELS, N_LABELS))
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = (line.rstrip("\n") for line in f if not line.startswith("#"))
            for line in lines:
                key, *rest = line.split("\t")
                if key == "trans":
                    transitions[LABEL_INDEX[rest[0]]] = [float(v) for v in rest[1:]]
                    continue
                header[key] = rest
                if key == "features":
                    break
            if header.get("version") != [MODEL_VERSION] or "features" not in header:
                raise InputFormatError(f"{path}: not a version {MODEL_VERSION} CRF model", field="version")
            n = int(header["features"][0])
            vocabulary, state = [], np.zeros((n, N_LABELS))
            for i in range(n):
                fid, name, *weights = next(lines).split("\t")
                if int(fid) != i:
                    raise InputFormatError(f"{path}: feature ids out of order at {fid}", field="features")
                vocabulary.append(name)
                state[i] = [float(w) for w in weights]
        config = CrfConfig(l2=float(header["l2"][0]), tol=float(header["tol"][0]),
                           max_iter=int(header["max_iter"][0]), seed=int(header["seed"][0]))
        return CrfModel(AgeKind(header["kind"][0]).value, vocabulary, state, transitions,
                        np.array([float(v) for v in header["start"]]),
                        np.array([float(v) for v in header["end"]]), config)
    except (KeyError, ValueError, IndexError, StopIteration) as e:
        raise InputFormatError(f"{path}: corrupt CRF model file ({e!r})", field="model")
