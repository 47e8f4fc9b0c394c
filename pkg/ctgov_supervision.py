"""
Distant supervision from registry records: the structured minimum/maximum ages
of a trial are aligned with its free-text eligibility criteria to produce
training data for the sentence finder, the CRF tagger and the QA scorer.
"""
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError
from tqdm import tqdm

from corpus import (
    AgeKind,
    Document,
    Token,
    is_keyword_sentence,
    split_sentences,
    tokenize,
    tokens_from_texts,
)
from errors import InputFormatError
from utils import read_jsonl, write_jsonl

SENTFINDER_FILE = "sentfinder.jsonl"
QA_FILE = "qa.jsonl"
BIO_LABELS = ("B", "I", "O")

T = TypeVar("T")


def bio_file(kind: Union[AgeKind, str]) -> str:
    return f"bio_{AgeKind(kind).value}.jsonl"

# --------------------------- Data Models ---------------------------

@dataclass(frozen=True)
class AgeValue:
    value: int
    unit: str       # verbatim from the registry, e.g. "Years"

    @property
    def is_years(self) -> bool:
        return self.unit.lower().startswith("year")


@dataclass(frozen=True)
class ClinicalRecord:
    nct_id: str
    criteria_text: str
    min_age: Optional[AgeValue]
    max_age: Optional[AgeValue]
    description: str = ""

    def age(self, kind: Union[AgeKind, str]) -> Optional[AgeValue]:
        return self.min_age if AgeKind(kind) is AgeKind.MIN else self.max_age


@dataclass(frozen=True)
class SentenceExample:
    text: str
    label: str      # positive | negative
    kind: str       # min | max | none


@dataclass(frozen=True)
class BioSequence:
    tokens: Tuple[Token, ...]
    labels: Tuple[str, ...]
    kind: str
    text: str = ""
    pos: Optional[Tuple[str, ...]] = None


@dataclass(frozen=True)
class QaPair:
    context: str
    kind: str
    answer_value: int
    answer_span: Tuple[int, int]
    nct_id: str = ""


@dataclass(frozen=True)
class SentFinderQuotas:
    min: int = 10_000
    max: int = 10_000
    negative: int = 20_000

# --------------------------- Registry parsing ---------------------------

class _RegistryRecordInput(BaseModel):
    nct_id: str
    criteria: str
    minimum_age: str = "N/A"
    maximum_age: str = "N/A"
    description: Optional[str] = None


_AGE_RE = re.compile(r"^\s*(\d+)\s*(years?|months?|weeks?|days?)\s*$", re.IGNORECASE)
_MISSING_AGES = {"", "n/a", "na", "none"}


def parse_age(text: str) -> Optional[AgeValue]:
    """'21 Years' -> AgeValue(21, 'Years'); 'N/A' -> None; anything else raises ValueError."""
    if text.strip().lower() in _MISSING_AGES:
        return None
    m = _AGE_RE.match(text)
    if not m:
        raise ValueError(f"unparseable age {text!r}")
    return AgeValue(value=int(m.group(1)), unit=m.group(2))


def parse_record(raw: Dict[str, Any]) -> Optional[ClinicalRecord]:
    """Parse one registry record; records with unparseable ages are skipped (None)."""
    try:
        rec = _RegistryRecordInput.model_validate(raw)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(part) for part in err["loc"]) or "record"
        raise InputFormatError(f"malformed registry record: {err['msg']}", field=loc)
    try:
        min_age = parse_age(rec.minimum_age)
        max_age = parse_age(rec.maximum_age)
    except ValueError as e:
        logger.warning("Skipping {}: {}", rec.nct_id, e)
        return None
    return ClinicalRecord(
        nct_id=rec.nct_id,
        criteria_text=rec.criteria,
        min_age=min_age,
        max_age=max_age,
        description=rec.description or "",
    )


def load_records(path: Union[str, Path]) -> List[ClinicalRecord]:
    if not Path(path).exists():
        raise FileNotFoundError(f"no such file: {path}")
    records: List[ClinicalRecord] = []
    skipped = 0
    for lineno, raw in tqdm(read_jsonl(path), desc="registry", unit="rec", disable=None):
        try:
            rec = parse_record(raw)
        except InputFormatError as e:
            raise InputFormatError(f"{path}:{lineno}: {e}", field=e.field)
        if rec is None:
            skipped += 1
        else:
            records.append(rec)
    logger.info("Parsed {} registry records ({} skipped)", len(records), skipped)
    return records

# --------------------------- Clause selection ---------------------------

# "-" only delimits at a line start or after "; " so ranges like 18-65 stay intact.
_CLAUSE_DELIMITER_RE = re.compile(r"(?m)^[ \t]*[-*•][ \t]*|;[ \t]+-[ \t]*")


def criteria_clauses(criteria_text: str) -> List[str]:
    clauses = []
    for chunk in _CLAUSE_DELIMITER_RE.split(criteria_text):
        chunk = re.sub(r"\s+", " ", chunk).strip()
        if chunk:
            clauses.extend(split_sentences(chunk))
    return clauses


def _first_value_token(tokens: Sequence[Token], value: int) -> Optional[int]:
    """First token spelling `value` exactly; "018" or non-ASCII digits do not count."""
    literal = str(value)
    for i, tok in enumerate(tokens):
        if tok.text == literal:
            return i
    return None


def select_age_clause(record: ClinicalRecord, kind: Union[AgeKind, str]) -> Optional[str]:
    """First criteria clause holding the annotated age as a token next to an age/year keyword."""
    age = record.age(kind)
    if age is None or not age.is_years:
        return None
    for clause in criteria_clauses(record.criteria_text):
        tokens = tokenize(clause)
        if _first_value_token(tokens, age.value) is not None and is_keyword_sentence(tokens):
            return clause
    return None

# --------------------------- Dataset builders ---------------------------

def _prepare_records(records: Iterable[ClinicalRecord], dedup: bool) -> List[ClinicalRecord]:
    ordered = sorted(records, key=lambda r: r.nct_id)
    if not dedup:
        return ordered
    seen, kept = set(), []
    for rec in ordered:
        key = " ".join(rec.criteria_text.split()).lower()
        if key in seen:
            continue
        seen.add(key)
        kept.append(rec)
    if len(kept) < len(ordered):
        logger.info("Dropped {} records with duplicate criteria text", len(ordered) - len(kept))
    return kept


def _rng(seed: int, kind: Union[AgeKind, str, None], stream: int) -> np.random.Generator:
    kind_id = {AgeKind.MIN: 0, AgeKind.MAX: 1}.get(AgeKind(kind), 2) if kind else 2
    return np.random.default_rng([seed, kind_id, stream])


def _sample(items: List[T], quota: int, rng: np.random.Generator, what: str) -> List[T]:
    if len(items) < quota:
        logger.warning("Only {} {} available (quota {})", len(items), what, quota)
    if len(items) <= quota:
        return list(items)
    chosen = np.sort(rng.choice(len(items), size=quota, replace=False))
    return [items[i] for i in chosen]


def _clause_pool(records: List[ClinicalRecord], kind: AgeKind) -> List[Tuple[ClinicalRecord, str]]:
    pool = []
    for rec in records:
        clause = select_age_clause(rec, kind)
        if clause is not None:
            pool.append((rec, clause))
    return pool


def _negative_sentences(records: List[ClinicalRecord], negative_corpus: Optional[Sequence[Document]]) -> List[str]:
    texts: List[str] = []
    if negative_corpus is not None:
        texts = [s.text for doc in negative_corpus for s in doc.sentences() if not s.has_keyword]
    else:
        for rec in records:
            if rec.description.strip():
                for sent in split_sentences(" ".join(rec.description.split())):
                    if not is_keyword_sentence(tokenize(sent)):
                        texts.append(sent)
    return list(dict.fromkeys(texts))


def build_sentfinder_dataset(
    records: Iterable[ClinicalRecord],
    negative_corpus: Optional[Sequence[Document]] = None,
    quotas: SentFinderQuotas = SentFinderQuotas(),
    seed: int = 13,
    dedup: bool = True,
) -> List[SentenceExample]:
    """
    Positives: the selected age clause of sampled records, per kind.
    Negatives: keyword-free sentences from `negative_corpus`, or from the
    records' own descriptions when no corpus is given.
    """
    pool = _prepare_records(records, dedup)
    examples: List[SentenceExample] = []
    for kind, quota in ((AgeKind.MIN, quotas.min), (AgeKind.MAX, quotas.max)):
        chosen = _sample(_clause_pool(pool, kind), quota, _rng(seed, kind, 0), f"{kind.value}-age clauses")
        examples.extend(SentenceExample(clause, "positive", kind.value) for _, clause in chosen)
    negatives = _sample(_negative_sentences(pool, negative_corpus), quotas.negative,
                        _rng(seed, None, 0), "negative sentences")
    examples.extend(SentenceExample(text, "negative", "none") for text in negatives)
    logger.info("Sentence finder dataset: {} positives, {} negatives",
                len(examples) - len(negatives), len(negatives))
    return examples


def validate_bio(labels: Sequence[str]) -> bool:
    """Exactly one B, and I only directly after B or I."""
    if any(label not in BIO_LABELS for label in labels) or list(labels).count("B") != 1:
        return False
    return all(label != "I" or (i > 0 and labels[i - 1] in ("B", "I")) for i, label in enumerate(labels))


def build_bio_dataset(
    records: Iterable[ClinicalRecord],
    kind: Union[AgeKind, str],
    quota: int = 10_000,
    seed: int = 13,
    dedup: bool = True,
) -> List[BioSequence]:
    kind = AgeKind(kind)
    sequences: List[BioSequence] = []
    for rec, clause in _clause_pool(_prepare_records(records, dedup), kind):
        tokens = tokenize(clause)
        first = _first_value_token(tokens, rec.age(kind).value)
        if first is None:
            continue
        labels = ["O"] * len(tokens)
        labels[first] = "B"
        sequences.append(BioSequence(tuple(tokens), tuple(labels), kind.value, text=clause))
    return _sample(sequences, quota, _rng(seed, kind, 1), f"{kind.value}-age BIO sequences")


def build_qa_dataset(
    records: Iterable[ClinicalRecord],
    kind: Union[AgeKind, str],
    quota: int = 10_000,
    seed: int = 13,
    dedup: bool = True,
    context: str = "criteria",
) -> List[QaPair]:
    """
    QA pairs whose answer span is the first standalone token equal to the
    annotated age. context="criteria" uses the whole eligibility text,
    context="clause" only the selected age clause.
    """
    kind = AgeKind(kind)
    pairs: List[QaPair] = []
    for rec in _prepare_records(records, dedup):
        age = rec.age(kind)
        if age is None or not age.is_years:
            continue
        text = rec.criteria_text if context == "criteria" else select_age_clause(rec, kind)
        if text is None:
            continue
        tokens = tokenize(text)
        first = _first_value_token(tokens, age.value)
        if first is None:
            logger.debug("Skipping {}: age {} not found as a token", rec.nct_id, age.value)
            continue
        tok = tokens[first]
        pairs.append(QaPair(text, kind.value, age.value, (tok.start, tok.end), rec.nct_id))
    return _sample(pairs, quota, _rng(seed, kind, 2), f"{kind.value}-age QA pairs")

# --------------------------- Line formats ---------------------------

def sentence_example_to_dict(ex: SentenceExample) -> Dict[str, Any]:
    return {"text": ex.text, "label": ex.label, "kind": ex.kind}


def bio_to_dict(seq: BioSequence) -> Dict[str, Any]:
    record = {"kind": seq.kind, "text": seq.text,
              "tokens": [t.text for t in seq.tokens], "labels": list(seq.labels)}
    if seq.pos is not None:
        record["pos"] = list(seq.pos)
    return record


def qa_to_dict(pair: QaPair) -> Dict[str, Any]:
    return {"nct_id": pair.nct_id, "kind": pair.kind, "context": pair.context,
            "answer_value": pair.answer_value, "answer_span": list(pair.answer_span)}


def read_sentence_examples(path: Union[str, Path]) -> List[SentenceExample]:
    examples = []
    for lineno, rec in read_jsonl(path):
        if rec.get("label") not in ("positive", "negative") or "text" not in rec:
            raise InputFormatError(f"{path}:{lineno}: expected text and label positive|negative", field="label")
        examples.append(SentenceExample(rec["text"], rec["label"], rec.get("kind", "none")))
    return examples


def read_bio_sequences(path: Union[str, Path]) -> List[BioSequence]:
    sequences = []
    for lineno, rec in read_jsonl(path):
        tokens, labels, pos = rec.get("tokens"), rec.get("labels"), rec.get("pos")
        if not isinstance(tokens, list) or not isinstance(labels, list) or len(tokens) != len(labels):
            raise InputFormatError(f"{path}:{lineno}: tokens and labels must be equal-length lists", field="labels")
        if not validate_bio(labels):
            raise InputFormatError(f"{path}:{lineno}: invalid BIO labelling", field="labels")
        if pos is not None and len(pos) != len(tokens):
            raise InputFormatError(f"{path}:{lineno}: pos must align with tokens", field="pos")
        sequences.append(BioSequence(
            tokens=tuple(tokens_from_texts(tokens)),
            labels=tuple(labels),
            kind=AgeKind(rec.get("kind", "min")).value,
            text=rec.get("text", ""),
            pos=tuple(pos) if pos is not None else None,
        ))
    return sequences


def read_qa_pairs(path: Union[str, Path]) -> List[QaPair]:
    pairs = []
    for lineno, rec in read_jsonl(path):
        try:
            context, value = rec["context"], int(rec["answer_value"])
            start, end = (int(x) for x in rec["answer_span"])
            kind = AgeKind(rec["kind"]).value
        except (KeyError, TypeError, ValueError) as e:
            raise InputFormatError(f"{path}:{lineno}: malformed QA pair ({e})", field="answer_span")
        if context[start:end] != str(value):
            raise InputFormatError(f"{path}:{lineno}: span does not hold the answer value", field="answer_span")
        pairs.append(QaPair(context, kind, value, (start, end), rec.get("nct_id", "")))
    return pairs


def build_datasets(
    records: Sequence[ClinicalRecord],
    out_dir: Union[str, Path],
    negative_corpus: Optional[Sequence[Document]] = None,
    quotas: SentFinderQuotas = SentFinderQuotas(),
    bio_quota: int = 10_000,
    qa_quota: int = 10_000,
    seed: int = 13,
    dedup: bool = True,
    qa_context: str = "clause",
) -> Dict[str, int]:
    """Write every distant-supervision dataset into `out_dir`; returns line counts per file."""
    out_dir = Path(out_dir)
    report: Dict[str, int] = {}
    examples = build_sentfinder_dataset(records, negative_corpus, quotas, seed, dedup)
    report[SENTFINDER_FILE] = write_jsonl(out_dir / SENTFINDER_FILE, map(sentence_example_to_dict, examples))
    qa_lines: List[Dict[str, Any]] = []
    for kind in AgeKind:
        bio = build_bio_dataset(records, kind, bio_quota, seed, dedup)
        report[bio_file(kind)] = write_jsonl(out_dir / bio_file(kind), map(bio_to_dict, bio))
        qa_lines.extend(map(qa_to_dict, build_qa_dataset(records, kind, qa_quota, seed, dedup, qa_context)))
    report[QA_FILE] = write_jsonl(out_dir / QA_FILE, qa_lines)
    for name, count in report.items():
        logger.info("Wrote {} lines to {}", count, out_dir / name)
    return report
