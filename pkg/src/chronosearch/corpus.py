"""Corpus ingestion, text normalization, and paragraph segmentation.

Raw documents arrive as JSON Lines (one object per document with keys
``doc_id``, ``title``, ``author``, ``year``, ``genre``, ``text``) and are
partitioned into a fiction and a non-fiction subset. Historical print
artifacts that matter for lexical matching (long s, hyphenated line
breaks) are repaired during normalization; the exact normalization
configuration travels with every index so query-time analysis is
guaranteed to match index-time analysis.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

log = logging.getLogger(__name__)


class Genre(str, Enum):
    FICTION = "fiction"
    NONFICTION = "nonfiction"


class SegmentUnit(str, Enum):
    DOCUMENT = "document"
    PARAGRAPH = "paragraph"


YEAR_RANGE = (1700, 1899)

LONG_S = "ſ"

_HYPHEN_LINEBREAK = re.compile(r"-[ \t]*\n\s*")
_WHITESPACE = re.compile(r"\s+")
_PARAGRAPH_BREAK = re.compile(r"\n\s*\n")


class _PunctuationToSpace(dict):
    """Lazy str.translate table mapping Unicode punctuation to a space."""

    def __missing__(self, codepoint: int):
        repl = " " if unicodedata.category(chr(codepoint)).startswith("P") else codepoint
        self[codepoint] = repl
        return repl


_PUNCT_TABLE = _PunctuationToSpace()


@dataclass(frozen=True)
class NormalizationConfig:
    """Analysis settings applied identically at index and query time.

    Long-s folding and hyphenated-linebreak repair default to on; they
    are cheap and high-yield on OCR'd historical print. Stopword removal
    defaults to off: the benchmark queries are short keyword queries and
    removing function words costs too much signal.
    """

    lowercase: bool = True
    fold_long_s: bool = True
    strip_punctuation: bool = True
    collapse_hyphen_linebreaks: bool = True
    stopwords: Optional[frozenset[str]] = None

    def to_dict(self) -> dict:
        return {
            "lowercase": self.lowercase,
            "fold_long_s": self.fold_long_s,
            "strip_punctuation": self.strip_punctuation,
            "collapse_hyphen_linebreaks": self.collapse_hyphen_linebreaks,
            "stopwords": sorted(self.stopwords) if self.stopwords is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationConfig":
        stopwords = data.get("stopwords")
        return cls(
            lowercase=bool(data["lowercase"]),
            fold_long_s=bool(data["fold_long_s"]),
            strip_punctuation=bool(data["strip_punctuation"]),
            collapse_hyphen_linebreaks=bool(data["collapse_hyphen_linebreaks"]),
            stopwords=frozenset(stopwords) if stopwords is not None else None,
        )


@dataclass
class RawDocument:
    doc_id: str
    title: str
    author: Optional[str]
    year: Optional[int]
    genre: Genre
    text: str


@dataclass
class Passage:
    """The retrieval unit: a whole document or a single paragraph.

    ``text`` keeps the raw (pre-normalization) segment for display and
    judging; only ``tokens`` feed the index.
    """

    passage_id: str
    doc_id: str
    genre: Genre
    tokens: list[str]
    text: str = ""

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass
class IngestReport:
    """Auditable record of one ingestion pass; nothing is silently dropped."""

    read: int = 0
    accepted: int = 0
    skipped_by_filter: int = 0
    errors: list[dict] = field(default_factory=list)
    warnings: list[dict] = field(default_factory=list)

    def add_error(self, line: int, reason: str, doc_id: Optional[str] = None) -> None:
        self.errors.append({"line": line, "doc_id": doc_id, "reason": reason})

    def add_warning(self, line: int, reason: str, doc_id: Optional[str] = None) -> None:
        self.warnings.append({"line": line, "doc_id": doc_id, "reason": reason})

    def to_dict(self) -> dict:
        return {
            "read": self.read,
            "accepted": self.accepted,
            "skipped_by_filter": self.skipped_by_filter,
            "errors": self.errors,
            "warnings": self.warnings,
        }


def normalize(text: str, cfg: NormalizationConfig) -> str:
    """Normalize one unit of text. Deterministic and idempotent.

    Enabled rules run in a fixed order: long-s folding, hyphenated
    linebreak repair, lowercasing, punctuation stripping; whitespace is
    always collapsed to single spaces at the end.
    """
    if cfg.fold_long_s:
        text = text.replace(LONG_S, "s")
    if cfg.collapse_hyphen_linebreaks:
        # Iterate to a fixpoint: removing one break can expose another
        # (e.g. "a--\t-\n\nb" style sequences in dirty OCR).
        while True:
            repaired = _HYPHEN_LINEBREAK.sub("", text)
            if repaired == text:
                break
            text = repaired
    if cfg.lowercase:
        text = text.lower()
    if cfg.strip_punctuation:
        text = text.translate(_PUNCT_TABLE)
    return _WHITESPACE.sub(" ", text).strip()


def tokenize(text: str, cfg: Optional[NormalizationConfig] = None) -> list[str]:
    """Split normalized text on whitespace, dropping configured stopwords."""
    tokens = text.split()
    if cfg is not None and cfg.stopwords:
        tokens = [t for t in tokens if t not in cfg.stopwords]
    return tokens


def analyze(text: str, cfg: NormalizationConfig) -> list[str]:
    """Full analysis pipeline (normalize then tokenize), shared by
    indexing and query processing."""
    return tokenize(normalize(text, cfg), cfg)


def ingest_corpus(
    path: str | Path,
    genre_filter: Optional[Genre] = None,
    report: Optional[IngestReport] = None,
) -> Iterator[RawDocument]:
    """Stream well-formed documents from a JSON Lines corpus file.

    Malformed records (bad JSON, missing/empty ``doc_id`` or ``text``,
    unknown genre, duplicate ``doc_id``) are recorded in the report and
    skipped; an unreadable file raises. Publication years outside
    1700-1899 produce a warning, not a rejection.
    """
    path = Path(path)
    if report is None:
        report = IngestReport()
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            report.read += 1
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                report.add_error(line_no, f"invalid JSON: {exc.msg}")
                continue
            if not isinstance(record, dict):
                report.add_error(line_no, "record is not a JSON object")
                continue
            doc_id = record.get("doc_id")
            if not isinstance(doc_id, str) or not doc_id:
                report.add_error(line_no, "missing doc_id")
                continue
            text = record.get("text")
            if not isinstance(text, str) or not text:
                report.add_error(line_no, "missing text", doc_id)
                continue
            genre_raw = record.get("genre")
            try:
                genre = Genre(str(genre_raw).lower())
            except ValueError:
                report.add_error(line_no, f"unknown genre {genre_raw!r}", doc_id)
                continue
            if doc_id in seen_ids:
                report.add_error(line_no, "duplicate doc_id", doc_id)
                continue
            seen_ids.add(doc_id)

            year = record.get("year")
            if year is not None:
                try:
                    year = int(year)
                except (TypeError, ValueError):
                    report.add_warning(line_no, f"unparseable year {year!r}", doc_id)
                    year = None
                else:
                    if not YEAR_RANGE[0] <= year <= YEAR_RANGE[1]:
                        report.add_warning(
                            line_no,
                            f"year {year} outside {YEAR_RANGE[0]}-{YEAR_RANGE[1]}",
                            doc_id,
                        )

            if genre_filter is not None and genre is not genre_filter:
                report.skipped_by_filter += 1
                continue
            report.accepted += 1
            yield RawDocument(
                doc_id=doc_id,
                title=str(record.get("title") or ""),
                author=record.get("author"),
                year=year,
                genre=genre,
                text=text,
            )


def segment_paragraphs(
    doc: RawDocument,
    unit: SegmentUnit,
    cfg: NormalizationConfig,
) -> list[Passage]:
    """Split a document into passages and analyze each one.

    Document mode yields exactly one passage carrying the doc_id;
    paragraph mode splits on blank-line boundaries, drops segments that
    analyze to zero tokens, and assigns ordinals in reading order. A
    document whose whole body analyzes to nothing is dropped with a
    warning.
    """
    if unit is SegmentUnit.DOCUMENT:
        tokens = analyze(doc.text, cfg)
        if not tokens:
            log.warning("document %s has no tokens after analysis; dropped", doc.doc_id)
            return []
        return [Passage(doc.doc_id, doc.doc_id, doc.genre, tokens, doc.text.strip())]

    passages: list[Passage] = []
    for piece in _PARAGRAPH_BREAK.split(doc.text):
        tokens = analyze(piece, cfg)
        if not tokens:
            continue
        ordinal = len(passages)
        passages.append(
            Passage(f"{doc.doc_id}#{ordinal}", doc.doc_id, doc.genre, tokens, piece.strip())
        )
    if not passages:
        log.warning("document %s has no tokens after analysis; dropped", doc.doc_id)
    return passages
