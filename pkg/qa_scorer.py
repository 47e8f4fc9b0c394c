"""
Answers "what is the min/max age of the participants?" for one sentence.

Every integer token is a candidate answer; a per-kind logistic scorer over
local context features ranks the candidates and its probability is the
answer confidence. Any object with a matching `answer` method can stand in
for QaModel inside the pipeline.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

from loguru import logger

from corpus import AGE_KEYWORDS, COMPARISON_SYMBOLS, AgeKind, Sentence, parse_integer_token, sentence_from_text
from ctgov_supervision import QaPair
from errors import InputFormatError, TrainingError
from maxent_sentfinder import (
    FeatureVector,
    MaxEntConfig,
    MaxEntModel,
    letter_ngrams,
    model_from_lines,
    model_to_lines,
    train_logistic,
)

_WINDOW = 3
_NGRAM_NEIGHBORS = (-2, -1, 1, 2)
_MAGNITUDE_EDGES = ((10, "0-9"), (16, "10-15"), (20, "16-19"), (30, "20-29"), (50, "30-49"), (70, "50-69"),
                    (101, "70-100"))
_DASHES = {"-", "to"}

# --------------------------- Data Models ---------------------------

@dataclass(frozen=True)
class AgeQuestion:
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "kind", AgeKind(self.kind).value)

    @property
    def text(self) -> str:
        return f"what is the {self.kind} age of the participants?"


@dataclass(frozen=True)
class Candidate:
    token_index: int
    value: int
    start: int
    end: int
    features: FeatureVector = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class AgeAnswer:
    value: int
    confidence: float
    kind: str
    sentence_index: int
    span: Tuple[int, int]       # character offsets within the evidence sentence
    evidence: str = ""


class SpanAnswerer(Protocol):
    def answer(self, s: Sentence, q: AgeQuestion) -> Optional[AgeAnswer]:
        ...

# --------------------------- Candidates ---------------------------

def _magnitude(value: int) -> str:
    for edge, name in _MAGNITUDE_EDGES:
        if value < edge:
            return name
    return ">100"


def _distance_bucket(d: int) -> str:
    if d <= 3:
        return str(d)
    return "4-6" if d <= 6 else "7+"


def _context_features(s: Sentence, i: int) -> FeatureVector:
    tokens = s.tokens
    n = len(tokens)
    norm = lambda j: tokens[j].norm if 0 <= j < n else ("<s>" if j < 0 else "</s>")
    is_num = lambda j: 0 <= j < n and tokens[j].numeric_value is not None

    feats: FeatureVector = {"bias": 1.0, f"mag:{_magnitude(tokens[i].numeric_value)}": 1.0}
    for o in range(-_WINDOW, _WINDOW + 1):
        if o:
            feats[f"w{o:+d}:{norm(i + o)}"] = 1.0
    for o in _NGRAM_NEIGHBORS:
        if 0 <= i + o < n:
            for gram in letter_ngrams(tokens[i + o].text):
                feats[f"n{o:+d}:{gram}"] = 1.0

    if norm(i + 1) in _DASHES and is_num(i + 2):
        feats["rangeLeft"] = 1.0
    if norm(i - 1) in _DASHES and is_num(i - 2):
        feats["rangeRight"] = 1.0
    if norm(i - 1) in COMPARISON_SYMBOLS:
        feats[f"cmpLeft:{norm(i - 1)}"] = 1.0
    if norm(i + 1) in COMPARISON_SYMBOLS:
        feats[f"cmpRight:{norm(i + 1)}"] = 1.0

    keyword_at = [j for j, t in enumerate(tokens) if t.norm in AGE_KEYWORDS]
    if keyword_at:
        j = min(keyword_at, key=lambda k: (abs(k - i), k))
        feats[f"kwdist:{_distance_bucket(abs(j - i))}"] = 1.0
        feats[f"kwside:{'right' if j > i else 'left'}"] = 1.0
    else:
        feats["kwdist:none"] = 1.0
    return feats


def enumerate_candidates(s: Sentence) -> List[Candidate]:
    candidates = []
    for i, tok in enumerate(s.tokens):
        value = parse_integer_token(tok)
        if value is not None:
            candidates.append(Candidate(i, value, tok.start, tok.end, _context_features(s, i)))
    return candidates


def featurize_candidate(c: Candidate, s: Sentence, q: AgeQuestion) -> FeatureVector:
    base = c.features or _context_features(s, c.token_index)
    return {f"{q.kind}^{name}": value for name, value in base.items()}

# --------------------------- Model ---------------------------

@dataclass
class QaModel:
    scorers: Dict[str, MaxEntModel]

    def answer_all(self, s: Sentence, q: AgeQuestion) -> List[Tuple[Candidate, float]]:
        scorer = self.scorers[q.kind]
        return [(c, scorer.probability(featurize_candidate(c, s, q))) for c in enumerate_candidates(s)]

    def answer(self, s: Sentence, q: AgeQuestion) -> Optional[AgeAnswer]:
        best: Optional[Tuple[Candidate, float]] = None
        for cand, prob in self.answer_all(s, q):
            if best is None or prob > best[1]:
                best = (cand, prob)
        if best is None:
            return None
        cand, prob = best
        return AgeAnswer(cand.value, prob, q.kind, s.index, (cand.start, cand.end), s.text)


def answer(model: SpanAnswerer, s: Sentence, q: AgeQuestion) -> Optional[AgeAnswer]:
    return model.answer(s, q)


def train_qa(pairs: Sequence[QaPair], config: MaxEntConfig = MaxEntConfig()) -> QaModel:
    """One binary scorer per kind: a candidate is positive iff its span is the pair's answer span."""
    scorers: Dict[str, MaxEntModel] = {}
    for kind in AgeKind:
        q = AgeQuestion(kind.value)
        vectors: List[FeatureVector] = []
        labels: List[int] = []
        for pair in pairs:
            if pair.kind != kind.value:
                continue
            s = sentence_from_text(pair.context)
            for cand in enumerate_candidates(s):
                vectors.append(featurize_candidate(cand, s, q))
                labels.append(1 if (cand.start, cand.end) == tuple(pair.answer_span) else 0)
        if not any(labels):
            raise TrainingError(f"qa_{kind.value}: no positive candidates among {len(labels)}")
        scorers[kind.value] = train_logistic(vectors, labels, config, name=f"qa_{kind.value}")
    return QaModel(scorers)

# --------------------------- Persistence ---------------------------

def save_qa(model: QaModel, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = ["# qa candidate scorer"]
    for kind in AgeKind:
        lines.append(f"kind\t{kind.value}")
        lines += model_to_lines(model.scorers[kind.value])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    logger.info("Saved QA scorer to {}", path)


def load_qa(path: Union[str, Path]) -> QaModel:
    scorers: Dict[str, MaxEntModel] = {}
    with open(path, "r", encoding="utf-8") as f:
        lines = (line for line in f if not line.startswith("#"))
        for line in lines:
            key, _, kind = line.rstrip("\n").partition("\t")
            if key != "kind" or kind not in (k.value for k in AgeKind):
                raise InputFormatError(f"{path}: expected a kind line, got {line.strip()!r}", field="kind")
            scorers[kind] = model_from_lines(lines, source=f"{path} [{kind}]")
    missing = [k.value for k in AgeKind if k.value not in scorers]
    if missing:
        raise InputFormatError(f"{path}: no scorer for {', '.join(missing)}", field="kind")
    return QaModel(scorers)
