"""
Article-level evaluation: a document counts as correct for a kind only when
the predicted value equals the annotated one.
"""
import csv
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from corpus import AgeKind, Document
from errors import EvaluationInputError, InputFormatError
from pipeline import ArticlePrediction

GOLD_COLUMNS = ("doc_id", "min_age", "max_age")


@dataclass(frozen=True)
class GoldAnnotation:
    doc_id: str
    min: Optional[int] = None
    max: Optional[int] = None

    def get(self, kind: Union[AgeKind, str]) -> Optional[int]:
        return self.min if AgeKind(kind) is AgeKind.MIN else self.max


@dataclass(frozen=True)
class KindMetrics:
    correct: int
    predicted: int
    annotated: int
    recall: float
    precision: float
    f1: float
    flags: Tuple[str, ...] = ()     # e.g. "precision_undefined" when nothing was predicted


@dataclass(frozen=True)
class Metrics:
    min: KindMetrics
    max: KindMetrics

    def get(self, kind: Union[AgeKind, str]) -> KindMetrics:
        return self.min if AgeKind(kind) is AgeKind.MIN else self.max


@dataclass(frozen=True)
class CorpusStats:
    articles: int = 0
    sentences: int = 0
    tokens: int = 0
    keyword_sentences: int = 0
    numeric_tokens: int = 0     # integer tokens inside keyword sentences

# --------------------------- Gold ---------------------------

def _age_cell(value: str, path: Path, lineno: int, column: str) -> Optional[int]:
    value = value.strip()
    if not value:
        return None
    try:
        age = int(value)
    except ValueError:
        raise InputFormatError(f"{path}:{lineno}: {column} must be an integer, got {value!r}", field=column)
    if age <= 0:
        raise InputFormatError(f"{path}:{lineno}: {column} must be positive", field=column)
    return age


def load_gold(path: Union[str, Path]) -> List[GoldAnnotation]:
    """Read the `doc_id,min_age,max_age` CSV; empty cells mean not annotated."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in GOLD_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise InputFormatError(f"{path}: missing columns {', '.join(missing)}", field="header")
        golds = []
        for lineno, row in enumerate(reader, 2):
            golds.append(GoldAnnotation(
                doc_id=row["doc_id"].strip(),
                min=_age_cell(row["min_age"] or "", path, lineno, "min_age"),
                max=_age_cell(row["max_age"] or "", path, lineno, "max_age"),
            ))
    return golds

# --------------------------- Scoring ---------------------------

def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def kind_metrics(correct: int, predicted: int, annotated: int) -> KindMetrics:
    flags = []
    if predicted == 0:
        flags.append("precision_undefined")
    if annotated == 0:
        flags.append("recall_undefined")
    recall = _ratio(correct, annotated)
    precision = _ratio(correct, predicted)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return KindMetrics(correct, predicted, annotated, recall, precision, f1, tuple(flags))


def _check_unique(ids: Sequence[str], what: str) -> None:
    dupes = sorted(i for i, n in Counter(ids).items() if n > 1)
    if dupes:
        raise EvaluationInputError(f"duplicate {what} ids: {', '.join(dupes[:5])}")


def score_corpus(preds: Sequence[ArticlePrediction], golds: Sequence[GoldAnnotation]) -> Metrics:
    _check_unique([p.id for p in preds], "prediction")
    _check_unique([g.doc_id for g in golds], "gold")
    gold_by_id = {g.doc_id: g for g in golds}
    unknown = sorted(p.id for p in preds if p.id not in gold_by_id)
    if unknown:
        raise EvaluationInputError(f"predictions for documents without gold rows: {', '.join(unknown[:5])}")

    pred_by_id = {p.id: p for p in preds}
    per_kind = {}
    for kind in AgeKind:
        correct = predicted = annotated = 0
        for doc_id, gold in gold_by_id.items():
            expected = gold.get(kind)
            pred = pred_by_id.get(doc_id)
            value = pred.value(kind) if pred is not None else None
            annotated += expected is not None
            predicted += value is not None
            correct += value is not None and value == expected
        per_kind[kind.value] = kind_metrics(correct, predicted, annotated)
    return Metrics(per_kind["min"], per_kind["max"])


def corpus_stats(docs: Sequence[Document]) -> CorpusStats:
    sentences = tokens = keyword = numeric = 0
    for doc in docs:
        for s in doc.sentences():
            sentences += 1
            tokens += len(s.tokens)
            if s.has_keyword:
                keyword += 1
                numeric += sum(t.numeric_value is not None for t in s.tokens)
    return CorpusStats(len(docs), sentences, tokens, keyword, numeric)

# --------------------------- Reporting ---------------------------

def metrics_to_dict(metrics: Metrics) -> Dict[str, Any]:
    return {kind.value: {**asdict(metrics.get(kind)), "flags": list(metrics.get(kind).flags)} for kind in AgeKind}


def _row(label: str, m: KindMetrics) -> str:
    return (f"{label:<16}{m.recall * 100:>8.1f}{m.precision * 100:>8.1f}{m.f1 * 100:>8.1f}"
            f"{m.correct:>9}{m.predicted:>11}{m.annotated:>11}")


def format_metrics_table(metrics: Metrics) -> str:
    lines = [f"{'':<16}{'R%':>8}{'P%':>8}{'F%':>8}{'correct':>9}{'predicted':>11}{'annotated':>11}"]
    for kind in AgeKind:
        m = metrics.get(kind)
        lines.append(_row(f"{kind.value} age", m))
        if m.flags:
            lines.append(f"{'':<16}note: {', '.join(m.flags)}")
    return "\n".join(lines)


def format_ablation_table(rows: Sequence[Tuple[str, Metrics]]) -> str:
    header = f"{'system':<18}" + "".join(f"{k.value + ' ' + c:>11}" for k in AgeKind for c in ("R%", "P%", "F%"))
    lines = [header]
    for name, metrics in rows:
        cells = "".join(f"{v * 100:>11.1f}" for k in AgeKind
                        for v in (metrics.get(k).recall, metrics.get(k).precision, metrics.get(k).f1))
        lines.append(f"{name:<18}{cells}")
    return "\n".join(lines)


def format_stats(stats: CorpusStats) -> str:
    rows = [
        ("articles", stats.articles),
        ("sentences", stats.sentences),
        ("tokens", stats.tokens),
        ("keyword sentences", stats.keyword_sentences),
        ("numbers in keyword sentences", stats.numeric_tokens),
    ]
    return "\n".join(f"{name:<30}{value:>10,}" for name, value in rows)
