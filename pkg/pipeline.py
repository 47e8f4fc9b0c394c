"""
Per-article extraction: sentence selection, per-sentence QA answers, the
non-factual (speculation) filter, and aggregation into one min and one max
age with an audit trail of every discarded answer.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

from loguru import logger
from tqdm import tqdm

from config import DEFAULT_SECTIONS, RunConfig, get_cues_path
from corpus import AgeKind, Document, Sentence, tokenize
from crf_tagger import CrfModel, extract_age_crf
from errors import InputFormatError
from maxent_sentfinder import POSITIVE, MaxEntModel, classify
from passage_baseline import AgePattern, ProximityConfig, RangePatternAnswerer, extract_age_passage
from qa_scorer import AgeAnswer, AgeQuestion, SpanAnswerer
from utils import read_jsonl, write_jsonl

T = TypeVar("T")

CLAUSE_BOUNDARIES = frozenset(",;:()[]")
DEFAULT_CUES = ("if", "at least", "must", "had to", "has to", "have to", "need", "needs")


class AuditStage:
    SPECULATION = "speculation"
    THRESHOLD = "threshold"
    ARGMAX = "argmax"
    CONFLICT = "conflict"

# --------------------------- Data Models ---------------------------

@dataclass(frozen=True)
class AuditEntry:
    stage: str
    answer: AgeAnswer
    reason: str


@dataclass
class ArticlePrediction:
    id: str
    min: Optional[AgeAnswer] = None
    max: Optional[AgeAnswer] = None
    audit: List[AuditEntry] = field(default_factory=list)

    def get(self, kind: Union[AgeKind, str]) -> Optional[AgeAnswer]:
        return self.min if AgeKind(kind) is AgeKind.MIN else self.max

    def value(self, kind: Union[AgeKind, str]) -> Optional[int]:
        answer = self.get(kind)
        return answer.value if answer is not None else None


class SpeculationCueSet:
    """Cue phrases matched case-insensitively as contiguous whole-token sequences."""

    def __init__(self, cues: Iterable[str] = DEFAULT_CUES):
        self.cues: List[str] = []
        self._sequences: List[Tuple[str, ...]] = []
        for cue in cues:
            seq = tuple(t.norm for t in tokenize(cue))
            if seq and cue.lower() not in self.cues:
                self.cues.append(cue.lower())
                self._sequences.append(seq)

    def find(self, text: str) -> Optional[str]:
        """First cue (in list order) occurring in `text`, or None."""
        norms = [t.norm for t in tokenize(text)]
        for cue, seq in zip(self.cues, self._sequences):
            k = len(seq)
            if any(tuple(norms[i:i + k]) == seq for i in range(len(norms) - k + 1)):
                return cue
        return None

    def __len__(self) -> int:
        return len(self.cues)


def load_cues(path: Union[str, Path, None] = None) -> SpeculationCueSet:
    path = Path(path) if path is not None else get_cues_path()
    with open(path, "r", encoding="utf-8") as f:
        cues = [line.strip() for line in f if line.strip() and not line.startswith("#")]
    return SpeculationCueSet(cues)

# --------------------------- Stages ---------------------------

def select_sentences(doc: Document, sentmodel: Optional[MaxEntModel],
                     sections: Sequence[str] = DEFAULT_SECTIONS,
                     use_classifier: bool = True) -> List[Sentence]:
    """Keyword sentences from the allowed sections that the sentence finder accepts."""
    selected = []
    for s in doc.sentences():
        if s.section not in sections or not s.has_keyword:
            continue
        if use_classifier and classify(sentmodel, s)[0] != POSITIVE:
            continue
        selected.append(s)
    return selected


def extract_clause(s: Sentence, span: Tuple[int, int]) -> str:
    """Text around `span` up to the nearest comma, semicolon, colon or bracket on each side."""
    text = s.text
    left = span[0]
    while left > 0 and text[left - 1] not in CLAUSE_BOUNDARIES:
        left -= 1
    right = span[1]
    while right < len(text) and text[right] not in CLAUSE_BOUNDARIES:
        right += 1
    return text[left:right].strip()


def speculation_cue(ans: AgeAnswer, s: Sentence, cues: SpeculationCueSet) -> Optional[str]:
    return cues.find(extract_clause(s, ans.span))


def filter_speculative(ans: AgeAnswer, s: Sentence, cues: SpeculationCueSet) -> Optional[AgeAnswer]:
    return None if speculation_cue(ans, s, cues) is not None else ans


def _describe(ans: AgeAnswer) -> str:
    return f"{ans.kind} {ans.value}@{ans.confidence:.3f} (sentence {ans.sentence_index})"


def aggregate(min_answers: Sequence[AgeAnswer], max_answers: Sequence[AgeAnswer],
              threshold: float = 0.5, doc_id: str = "") -> ArticlePrediction:
    """
    Threshold, keep the most confident answer per kind (ties: earliest
    sentence), then resolve min >= max by keeping the more confident side
    (ties keep min).
    """
    pred = ArticlePrediction(doc_id)
    best: Dict[str, Optional[AgeAnswer]] = {}
    for kind, answers in ((AgeKind.MIN, min_answers), (AgeKind.MAX, max_answers)):
        survivors = []
        for ans in answers:
            if ans.confidence < threshold:
                pred.audit.append(AuditEntry(AuditStage.THRESHOLD, ans,
                                             f"confidence {ans.confidence:.3f} below {threshold:.3f}"))
            else:
                survivors.append(ans)
        survivors.sort(key=lambda a: (-a.confidence, a.sentence_index, a.span))
        best[kind.value] = survivors[0] if survivors else None
        for ans in survivors[1:]:
            pred.audit.append(AuditEntry(AuditStage.ARGMAX, ans, f"outranked by {_describe(survivors[0])}"))

    lo, hi = best["min"], best["max"]
    if lo is not None and hi is not None and lo.value >= hi.value:
        if lo.confidence >= hi.confidence:
            pred.audit.append(AuditEntry(AuditStage.CONFLICT, hi, f"not above min answer {_describe(lo)}"))
            hi = None
        else:
            pred.audit.append(AuditEntry(AuditStage.CONFLICT, lo, f"not below max answer {_describe(hi)}"))
            lo = None
    pred.min, pred.max = lo, hi
    return pred


def run_pipeline(doc: Document, sentmodel: Optional[MaxEntModel], qamodel: Optional[SpanAnswerer],
                 cues: SpeculationCueSet, config: Optional[RunConfig] = None) -> ArticlePrediction:
    config = config or RunConfig()
    use_filter = not config.has_ablation("no_filter")
    answerer: SpanAnswerer = RangePatternAnswerer() if config.has_ablation("no_qa") else qamodel

    sentences = select_sentences(doc, sentmodel, config.sections,
                                 use_classifier=not config.has_ablation("no_sentfinder"))
    by_index = {s.index: s for s in sentences}
    answers: Dict[str, List[AgeAnswer]] = {k.value: [] for k in AgeKind}
    for s in sentences:
        for kind in AgeKind:
            ans = answerer.answer(s, AgeQuestion(kind.value))
            if ans is not None:
                answers[kind.value].append(ans)

    audit: List[AuditEntry] = []
    if use_filter and config.filter_stage == "before":
        for kind in answers:
            kept = []
            for ans in answers[kind]:
                cue = speculation_cue(ans, by_index[ans.sentence_index], cues)
                if cue is None:
                    kept.append(ans)
                else:
                    audit.append(AuditEntry(AuditStage.SPECULATION, ans, f"cue {cue!r} in clause"))
            answers[kind] = kept

    pred = aggregate(answers["min"], answers["max"], config.confidence_threshold, doc.id)
    pred.audit[:0] = audit

    if use_filter and config.filter_stage == "after":
        for kind in AgeKind:
            ans = pred.get(kind)
            cue = speculation_cue(ans, by_index[ans.sentence_index], cues) if ans else None
            if cue is not None:
                pred.audit.append(AuditEntry(AuditStage.SPECULATION, ans, f"cue {cue!r} in clause"))
                setattr(pred, kind.value, None)
    return pred

# --------------------------- Baselines ---------------------------

def passage_prediction(doc: Document, patterns: Sequence[AgePattern],
                       cfg: ProximityConfig = ProximityConfig()) -> ArticlePrediction:
    return ArticlePrediction(doc.id, extract_age_passage(doc, AgeKind.MIN, cfg, patterns),
                             extract_age_passage(doc, AgeKind.MAX, cfg, patterns))


def crf_prediction(doc: Document, models: Dict[str, CrfModel]) -> ArticlePrediction:
    return ArticlePrediction(doc.id, extract_age_crf(models["min"], doc, AgeKind.MIN),
                             extract_age_crf(models["max"], doc, AgeKind.MAX))

# --------------------------- Batch ---------------------------

def map_documents(fn: Callable[[Document], T], docs: Sequence[Document], jobs: int = 1,
                  desc: str = "documents") -> List[T]:
    """Apply `fn` to every document, in a process pool when jobs > 1; results keep input order."""
    if jobs <= 1 or len(docs) <= 1:
        return [fn(doc) for doc in tqdm(docs, desc=desc, unit="doc", disable=None)]
    chunksize = max(1, len(docs) // (jobs * 4))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(tqdm(pool.map(fn, docs, chunksize=chunksize), total=len(docs),
                         desc=desc, unit="doc", disable=None))

# --------------------------- Line format ---------------------------

def answer_to_dict(ans: Optional[AgeAnswer]) -> Optional[Dict[str, Any]]:
    if ans is None:
        return None
    return {"value": ans.value, "confidence": ans.confidence,
            "sentence_index": ans.sentence_index, "evidence": ans.evidence}


def prediction_to_dict(pred: ArticlePrediction) -> Dict[str, Any]:
    return {
        "id": pred.id,
        "min": answer_to_dict(pred.min),
        "max": answer_to_dict(pred.max),
        "audit": [{"stage": e.stage, "kind": e.answer.kind, "value": e.answer.value,
                   "confidence": e.answer.confidence, "sentence_index": e.answer.sentence_index,
                   "reason": e.reason} for e in pred.audit],
    }


def _answer_from_dict(data: Optional[Dict[str, Any]], kind: str) -> Optional[AgeAnswer]:
    if data is None:
        return None
    return AgeAnswer(int(data["value"]), float(data["confidence"]), kind,
                     int(data.get("sentence_index", -1)), (0, 0), data.get("evidence", ""))


def prediction_from_dict(data: Dict[str, Any]) -> ArticlePrediction:
    audit = [AuditEntry(e["stage"], AgeAnswer(int(e["value"]), float(e["confidence"]), e["kind"],
                                              int(e.get("sentence_index", -1)), (0, 0)), e.get("reason", ""))
             for e in data.get("audit", [])]
    return ArticlePrediction(str(data["id"]), _answer_from_dict(data.get("min"), "min"),
                             _answer_from_dict(data.get("max"), "max"), audit)


def write_predictions(path: Union[str, Path], preds: Iterable[ArticlePrediction]) -> int:
    n = write_jsonl(path, map(prediction_to_dict, preds))
    logger.info("Wrote {} predictions to {}", n, path)
    return n


def read_predictions(path: Union[str, Path]) -> List[ArticlePrediction]:
    preds = []
    for lineno, record in read_jsonl(path):
        try:
            preds.append(prediction_from_dict(record))
        except (KeyError, TypeError, ValueError) as e:
            raise InputFormatError(f"{path}:{lineno}: malformed prediction ({e!r})", field="prediction")
    return preds
