"""
Document model shared by every extractor: sections, paragraphs, sentences and
a tokenizer that keeps digit runs, dashes and comparison symbols apart
("aged 6-12 years" -> aged / 6 / - / 12 / years).
"""
import enum
import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

from loguru import logger
from pydantic import BaseModel, ValidationError

from errors import InputFormatError
from utils import read_jsonl

AGE_KEYWORDS = frozenset({"age", "ages", "aged", "year", "years"})


class AgeKind(str, enum.Enum):
    MIN = "min"
    MAX = "max"


# Canonical forms used by feature extractors; the original text stays on the token.
CANONICAL_FORMS = {
    "–": "-", "—": "-", "‐": "-", "‑": "-", "−": "-",
    "≥": ">=", "≤": "<=", "⩾": ">=", "⩽": "<=",
}
COMPARISON_SYMBOLS = frozenset({"<", ">", "=", "<=", ">=", "≤", "≥"})

# Superscript, subscript and fraction signs are numeric but not \d; each stands alone.
_NUMERIC_SIGNS = "⁰¹²³⁴-⁹₀-₉¼-¾⅐-⅞"
_TOKEN_RE = re.compile(rf"\d+|<=|>=|[<>≤≥=]|[^\W\d_{_NUMERIC_SIGNS}]+|\S")
_DIGITS_RE = re.compile(r"\d+")

# --------------------------- Data Models ---------------------------

@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int
    numeric_value: Optional[int]
    shape: str

    @property
    def norm(self) -> str:
        return CANONICAL_FORMS.get(self.text, self.text).lower()


@dataclass(frozen=True)
class Sentence:
    text: str
    tokens: Tuple[Token, ...]
    section: str
    index: int
    start: int = 0      # offset into the paragraph

    @property
    def has_keyword(self) -> bool:
        return is_keyword_sentence(self.tokens)


@dataclass(frozen=True)
class Paragraph:
    text: str
    sentences: Tuple[Sentence, ...]


@dataclass(frozen=True)
class Section:
    name: str
    paragraphs: Tuple[Paragraph, ...]


@dataclass(frozen=True)
class Document:
    id: str
    sections: Tuple[Section, ...]

    def sentences(self) -> List[Sentence]:
        return [s for sec in self.sections for p in sec.paragraphs for s in p.sentences]

# --------------------------- Tokenizer ---------------------------

def word_shape(text: str) -> str:
    if _DIGITS_RE.fullmatch(text):
        return "AllDigits"
    if any(unicodedata.category(ch) == "Nd" for ch in text):
        return "ContainsDigit"
    if text in COMPARISON_SYMBOLS or all(unicodedata.category(ch).startswith("S") for ch in text):
        return "Symbol"
    if any(ch.isalpha() for ch in text):
        if len(text) > 1 and text.isupper():
            return "AllCaps"
        if text[0].isupper():
            return "Capitalized"
        return "Lower"
    return "Punct"


def _make_token(text: str, start: int, end: int) -> Token:
    value = int(text) if _DIGITS_RE.fullmatch(text) else None
    return Token(text=text, start=start, end=end, numeric_value=value, shape=word_shape(text))


def tokenize(text: str) -> List[Token]:
    return [_make_token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def tokens_from_texts(texts: Sequence[str]) -> List[Token]:
    """Build tokens for pre-tokenized input, with offsets into the space-joined text."""
    tokens, pos = [], 0
    for text in texts:
        tokens.append(_make_token(text, pos, pos + len(text)))
        pos += len(text) + 1
    return tokens


def parse_integer_token(tok: Token) -> Optional[int]:
    """Integer value of an all-digit token; decimals and spelled-out numbers give None."""
    return int(tok.text) if _DIGITS_RE.fullmatch(tok.text) else None


def is_keyword_sentence(tokens: Iterable[Token]) -> bool:
    return any(t.norm in AGE_KEYWORDS for t in tokens)

# --------------------------- Sentence splitting ---------------------------

ABBREVIATIONS = frozenset({
    "e.g.", "i.e.", "vs.", "al.", "fig.", "figs.", "cf.", "ca.", "approx.",
    "eq.", "ref.", "no.", "dr.", "mr.", "mrs.", "ms.", "st.",
})

_BOUNDARY_RE = re.compile(r"[.!?]+[\"'”’)\]]*(?=\s)")


def _is_abbreviation(paragraph: str, dot: int) -> bool:
    word_start = dot
    while word_start > 0 and not paragraph[word_start - 1].isspace():
        word_start -= 1
    word = paragraph[word_start:dot + 1].lstrip("([\"'")
    return word.lower() in ABBREVIATIONS or re.fullmatch(r"[A-Z]\.", word) is not None


def _trim(text: str, start: int, end: int) -> Tuple[int, int]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def sentence_spans(paragraph: str) -> List[Tuple[int, int]]:
    spans: List[Tuple[int, int]] = []
    start, n = 0, len(paragraph)
    for m in _BOUNDARY_RE.finditer(paragraph):
        nxt = m.end()
        while nxt < n and paragraph[nxt].isspace():
            nxt += 1
        if nxt >= n:
            break
        if not (paragraph[nxt].isupper() or paragraph[nxt].isdigit()):
            continue
        if paragraph[m.start()] == "." and _is_abbreviation(paragraph, m.start()):
            continue
        spans.append(_trim(paragraph, start, m.end()))
        start = nxt
    spans.append(_trim(paragraph, start, n))
    return [(s, e) for s, e in spans if e > s]


def split_sentences(paragraph: str) -> List[str]:
    return [paragraph[s:e] for s, e in sentence_spans(paragraph)]


def sentence_from_text(text: str, section: str = "other", index: int = 0) -> Sentence:
    return Sentence(text=text, tokens=tuple(tokenize(text)), section=section, index=index)

# --------------------------- Document loading ---------------------------

SectionName = Literal["abstract", "introduction", "method", "result", "discussion", "other"]


class _SectionInput(BaseModel):
    name: SectionName
    paragraphs: List[str]


class _DocumentInput(BaseModel):
    id: str
    sections: List[_SectionInput]


# Order matters: the first kind whose keyword matches wins.
HEADING_KEYWORDS: Tuple[Tuple[str, Tuple[str, ...]], ...] = (
    ("abstract", ("abstract", "summary")),
    ("introduction", ("introduction", "background")),
    ("method", ("materials and methods", "methods and materials", "methods", "method",
                "participants", "subjects", "study design", "design", "procedures", "procedure")),
    ("result", ("results", "result", "findings")),
    ("discussion", ("discussion", "conclusions", "conclusion")),
)
_EXACT_HEADINGS = {kw: kind for kind, kws in HEADING_KEYWORDS for kw in kws}
_NUMBERING_RE = re.compile(r"^(?:\d+(?:\.\d+)*|[ivx]+)\.?\s+", re.IGNORECASE)


def _normalize_heading(line: str) -> str:
    text = _NUMBERING_RE.sub("", line.strip().lstrip("#").strip())
    return re.sub(r"\s+", " ", text.rstrip(":.").strip()).lower()


def heading_section(line: str) -> Optional[str]:
    """
    Section kind for a heading line, or None if the line is not a heading.
    Markdown headings always count (unmatched -> other); bare lines count only
    when they are exactly a known heading, optionally numbered ("2. Methods").
    """
    stripped = line.strip()
    if not stripped:
        return None
    heading = _normalize_heading(stripped)
    if stripped.startswith("#"):
        for kind, keywords in HEADING_KEYWORDS:
            if any(re.search(rf"\b{re.escape(kw)}\b", heading) for kw in keywords):
                return kind
        return "other"
    return _EXACT_HEADINGS.get(heading)


def _plain_text_sections(text: str) -> List[Tuple[str, List[str]]]:
    sections: List[Tuple[str, List[str]]] = []
    name: Optional[str] = None
    paragraphs: List[str] = []
    buf: List[str] = []

    def flush_paragraph():
        if buf:
            paragraphs.append(" ".join(line.strip() for line in buf))
            buf.clear()

    for line in text.splitlines():
        kind = heading_section(line)
        if kind is not None:
            flush_paragraph()
            if name is not None or paragraphs:
                sections.append((name or "other", paragraphs))
            name, paragraphs = kind, []
        elif not line.strip():
            flush_paragraph()
        else:
            buf.append(line)
    flush_paragraph()
    if name is not None or paragraphs:
        sections.append((name or "other", paragraphs))
    return sections


def build_document(doc_id: str, sections: Iterable[Tuple[str, Iterable[str]]]) -> Document:
    built: List[Section] = []
    index = 0
    for name, paragraphs in sections:
        paras: List[Paragraph] = []
        for text in paragraphs:
            if not text.strip():
                continue
            sentences = []
            for start, end in sentence_spans(text):
                chunk = text[start:end]
                sentences.append(Sentence(chunk, tuple(tokenize(chunk)), name, index, start))
                index += 1
            paras.append(Paragraph(text=text, sentences=tuple(sentences)))
        built.append(Section(name=name, paragraphs=tuple(paras)))
    return Document(id=doc_id, sections=tuple(built))


def load_document(raw: Union[Dict[str, Any], str], doc_id: str = "document") -> Document:
    """Build a Document from a schema object or from plain text with headings."""
    if isinstance(raw, str):
        return build_document(doc_id, _plain_text_sections(raw))
    if not isinstance(raw, dict):
        raise InputFormatError("document must be a JSON object or plain text", field="document")
    try:
        parsed = _DocumentInput.model_validate(raw)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(part) for part in err["loc"]) or "document"
        raise InputFormatError(f"malformed document: {err['msg']}", field=loc)
    return build_document(parsed.id, ((s.name, s.paragraphs) for s in parsed.sections))


def _load_file(path: Path) -> List[Document]:
    suffix = path.suffix.lower()
    if suffix == ".jsonl":
        docs = []
        for lineno, record in read_jsonl(path):
            try:
                docs.append(load_document(record))
            except InputFormatError as e:
                raise InputFormatError(f"{path}:{lineno}: {e}", field=e.field)
        return docs
    if suffix == ".json":
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise InputFormatError(f"{path}: invalid JSON ({e.msg})", field=str(path))
        items = data if isinstance(data, list) else [data]
        return [load_document(item) for item in items]
    return [load_document(path.read_text(encoding="utf-8"), doc_id=path.stem)]


def load_documents(path: Union[str, Path]) -> List[Document]:
    """Read documents from a .jsonl/.json/.txt/.md file or a directory of such files."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file or directory: {path}")
    if path.is_dir():
        files = sorted(p for p in path.iterdir()
                       if p.is_file() and p.suffix.lower() in (".jsonl", ".json", ".txt", ".md"))
        docs = [doc for f in files for doc in _load_file(f)]
    else:
        docs = _load_file(path)
    logger.info("Loaded {} documents from {}", len(docs), path)
    return docs
