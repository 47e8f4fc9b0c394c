"""
Passage-retrieval baseline: fixed-size token windows around age/year query
terms, pattern-validated answer candidates, and a Gaussian term-proximity
ranking.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, List, Optional, Sequence, Tuple, Union

from loguru import logger

from config import get_patterns_path
from corpus import AGE_KEYWORDS, AgeKind, Document, Sentence, Token, tokenize
from errors import InputFormatError
from qa_scorer import AgeAnswer, AgeQuestion

PLACEHOLDERS = ("X", "Y")
MIN_VALUE, MAX_VALUE = 10, 100

# --------------------------- Data Models ---------------------------

@dataclass(frozen=True)
class ProximityConfig:
    sigma: float = 1.0
    query_terms: FrozenSet[str] = AGE_KEYWORDS
    sizes: Tuple[int, ...] = (10, 20, 30)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class Passage:
    start: int
    size: int
    end: int
    query_positions: Tuple[int, ...]        # document positions of query terms inside the window


@dataclass(frozen=True)
class PassageCandidate:
    position: int       # document token position
    value: int
    pattern_id: str


@dataclass(frozen=True)
class AgePattern:
    id: str
    kind: str
    template: Tuple[str, ...]       # canonical token norms; X / Y are integer slots
    capture: str

    def match_at(self, tokens: Sequence[Token], i: int) -> Optional[Tuple[int, int]]:
        """(position, value) of the captured integer when the template matches at token i."""
        if i + len(self.template) > len(tokens):
            return None
        captured = None
        for k, expected in enumerate(self.template):
            tok = tokens[i + k]
            if expected in PLACEHOLDERS:
                if tok.numeric_value is None:
                    return None
                if expected == self.capture:
                    captured = (i + k, tok.numeric_value)
            elif tok.norm != expected:
                return None
        return captured


@dataclass
class DocumentTokens:
    """All tokens of a document in reading order, each paired with its sentence."""
    tokens: List[Token] = field(default_factory=list)
    sentences: List[Sentence] = field(default_factory=list)

    @classmethod
    def of(cls, doc: Document) -> "DocumentTokens":
        flat = cls()
        for s in doc.sentences():
            flat.tokens.extend(s.tokens)
            flat.sentences.extend([s] * len(s.tokens))
        return flat

# --------------------------- Patterns ---------------------------

def compile_pattern(kind: str, template: str, capture: str) -> AgePattern:
    tokens = []
    for tok in tokenize(template):
        tokens.append(tok.text if tok.text in PLACEHOLDERS else tok.norm)
    if capture not in PLACEHOLDERS or capture not in tokens:
        raise ValueError(f"capture {capture!r} does not occur in template {template!r}")
    return AgePattern(id=f"{kind}:{template}", kind=AgeKind(kind).value, template=tuple(tokens), capture=capture)


def load_patterns(path: Union[str, Path, None] = None) -> List[AgePattern]:
    """Read `kind<TAB>template<TAB>capture` lines; blank lines and # comments are skipped."""
    path = Path(path) if path is not None else get_patterns_path()
    patterns = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            try:
                if len(parts) != 3:
                    raise ValueError(f"expected 3 tab-separated fields, got {len(parts)}")
                patterns.append(compile_pattern(*parts))
            except ValueError as e:
                raise InputFormatError(f"{path}:{lineno}: {e}", field="pattern")
    logger.debug("Loaded {} age patterns from {}", len(patterns), path)
    return patterns

# --------------------------- Retrieval and scoring ---------------------------

def retrieve_passages(doc: Union[Document, DocumentTokens], sizes: Sequence[int] = (10, 20, 30),
                      query_terms: FrozenSet[str] = AGE_KEYWORDS) -> List[Passage]:
    flat = doc if isinstance(doc, DocumentTokens) else DocumentTokens.of(doc)
    n = len(flat.tokens)
    hits = [i for i, t in enumerate(flat.tokens) if t.norm in query_terms]
    passages, seen = [], set()
    for size in sizes:
        for p in hits:
            start = max(0, min(p - size // 2, n - size))
            if (start, size) in seen:
                continue
            seen.add((start, size))
            end = min(n, start + size)
            passages.append(Passage(start, size, end, tuple(q for q in hits if start <= q < end)))
    return passages


def validate_candidates(p: Passage, kind: Union[AgeKind, str], patterns: Sequence[AgePattern],
                        tokens: Sequence[Token]) -> List[PassageCandidate]:
    """Pattern matches lying wholly inside the passage whose captured value is in [10, 100]."""
    kind = AgeKind(kind).value
    window = tokens[p.start:p.end]
    found = []
    for pattern in patterns:
        if pattern.kind != kind:
            continue
        for i in range(len(window)):
            match = pattern.match_at(window, i)
            if match is not None and MIN_VALUE <= match[1] <= MAX_VALUE:
                found.append(PassageCandidate(p.start + match[0], match[1], pattern.id))
    return sorted(set(found), key=lambda c: (c.position, c.pattern_id))


def proximity_score(c: PassageCandidate, p: Passage, cfg: ProximityConfig = ProximityConfig()) -> float:
    """Mean of exp(-(pos_c - pos_q)^2 / sigma) over the query-term occurrences in the passage."""
    if not p.query_positions:
        return 0.0
    total = sum(math.exp(-((c.position - q) ** 2) / cfg.sigma) for q in p.query_positions)
    return total / len(p.query_positions)


def extract_age_passage(doc: Document, kind: Union[AgeKind, str], cfg: ProximityConfig = ProximityConfig(),
                        patterns: Optional[Sequence[AgePattern]] = None) -> Optional[AgeAnswer]:
    """Best-scoring validated candidate over all passages of every size; ties go to the earlier position."""
    kind = AgeKind(kind).value
    patterns = load_patterns() if patterns is None else patterns
    flat = DocumentTokens.of(doc)
    best: Optional[Tuple[float, PassageCandidate]] = None
    for passage in retrieve_passages(flat, cfg.sizes, cfg.query_terms):
        for cand in validate_candidates(passage, kind, patterns, flat.tokens):
            score = proximity_score(cand, passage, cfg)
            if best is None or score > best[0] or (score == best[0] and cand.position < best[1].position):
                best = (score, cand)
    if best is None:
        return None
    score, cand = best
    tok, sentence = flat.tokens[cand.position], flat.sentences[cand.position]
    return AgeAnswer(cand.value, min(1.0, max(0.0, score)), kind, sentence.index, (tok.start, tok.end), sentence.text)

# --------------------------- Range pattern answerer ---------------------------

class RangePatternAnswerer:
    """
    Stands in for the QA scorer: answers from the first "X-Y" range in the
    sentence (X for min, Y for max) with confidence 1.0.
    """

    def __init__(self, max_value: int = 120):
        self.max_value = max_value
        self._patterns = {kind.value: compile_pattern(kind.value, "X - Y", "X" if kind is AgeKind.MIN else "Y")
                          for kind in AgeKind}

    def answer(self, s: Sentence, q: AgeQuestion) -> Optional[AgeAnswer]:
        pattern = self._patterns[q.kind]
        tokens = s.tokens
        for i in range(len(tokens)):
            if pattern.match_at(tokens, i) is None:
                continue
            low, high = tokens[i].numeric_value, tokens[i + 2].numeric_value
            if not low < high <= self.max_value:
                continue
            tok = tokens[i] if q.kind == AgeKind.MIN.value else tokens[i + 2]
            return AgeAnswer(tok.numeric_value, 1.0, q.kind, s.index, (tok.start, tok.end), s.text)
        return None
