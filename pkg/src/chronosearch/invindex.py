"""Inverted index construction, merging, and versioned on-disk persistence.

Indexes are self-contained per collection (fiction, non-fiction, or the
merged union): each carries its own postings, statistics, and the
normalization configuration it was built with, so collections can be
composed freely at feedback time. Internal integer ids are assigned in
passage_id sort order, which makes builds reproducible regardless of
input ordering.

On disk an index is a directory of three files: ``meta.json`` (human-
diffable configuration and counts), ``postings.bin`` and ``idmap.bin``
(magic-tagged, varint-encoded binary).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .corpus import Genre, NormalizationConfig, Passage, SegmentUnit

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
POSTINGS_MAGIC = b"CSPX"
IDMAP_MAGIC = b"CSIM"

MERGED_LABEL = "merged"
INDEX_FILES = ("meta.json", "postings.bin", "idmap.bin")


class IndexFormatError(Exception):
    """Raised when an on-disk index is unreadable or version-incompatible."""


@dataclass
class CollectionStats:
    passage_count: int
    total_tokens: int
    df: dict[str, int]
    cf: dict[str, int]

    @property
    def avgdl(self) -> float:
        return self.total_tokens / self.passage_count


@dataclass(frozen=True)
class IndexMeta:
    normalization: NormalizationConfig
    unit: SegmentUnit
    genre: str  # "fiction" | "nonfiction" | "merged"
    format_version: int = FORMAT_VERSION

    def analysis_compatible(self, other: "IndexMeta") -> bool:
        return self.normalization == other.normalization and self.unit == other.unit


class Index:
    """Immutable in-memory inverted index for one collection.

    ``postings`` maps term -> list of (passage_ref, tf) sorted by ref;
    ``passage_ids`` and ``lengths`` are indexed by passage_ref.
    """

    def __init__(
        self,
        postings: dict[str, list[tuple[int, int]]],
        passage_ids: list[str],
        lengths: list[int],
        meta: IndexMeta,
    ):
        self.postings = postings
        self.passage_ids = passage_ids
        self.lengths = lengths
        self.meta = meta
        self._ref_by_id: Optional[dict[str, int]] = None
        df = {term: len(plist) for term, plist in postings.items()}
        cf = {term: sum(tf for _, tf in plist) for term, plist in postings.items()}
        self.stats = CollectionStats(
            passage_count=len(passage_ids),
            total_tokens=sum(lengths),
            df=df,
            cf=cf,
        )

    def ref_of(self, passage_id: str) -> int:
        if self._ref_by_id is None:
            self._ref_by_id = {pid: ref for ref, pid in enumerate(self.passage_ids)}
        return self._ref_by_id[passage_id]

    def doc_term_frequencies(self, refs: Iterable[int]) -> dict[int, dict[str, int]]:
        """Term vectors for the given passages, via one postings scan."""
        wanted = set(refs)
        vectors: dict[int, dict[str, int]] = {ref: {} for ref in wanted}
        for term, plist in self.postings.items():
            for ref, tf in plist:
                if ref in wanted:
                    vectors[ref][term] = tf
        return vectors


def vocabulary_contains(index: Index, term: str) -> bool:
    """True iff the term occurs in at least one passage of this collection."""
    return term in index.postings


def build_index(
    passages: Iterable[Passage],
    cfg: NormalizationConfig,
    unit: SegmentUnit,
    genre: Optional[str] = None,
) -> Index:
    """Build an index over a passage stream.

    Passages are sorted by passage_id before id assignment, so the
    result is independent of input order. ``genre`` labels the
    collection; when omitted it is inferred from the passages (uniform
    genre required, otherwise label the build "merged" explicitly).
    """
    ordered = sorted(passages, key=lambda p: p.passage_id)
    if not ordered:
        raise ValueError("empty collection")

    genres = {p.genre for p in ordered}
    if genre is None:
        if len(genres) > 1:
            raise ValueError(
                "passages span multiple genres; pass genre='merged' to build a joint index"
            )
        genre = next(iter(genres)).value

    postings: dict[str, list[tuple[int, int]]] = {}
    passage_ids: list[str] = []
    lengths: list[int] = []
    for ref, passage in enumerate(ordered):
        if passage_ids and passage.passage_id == passage_ids[-1]:
            raise ValueError(f"duplicate passage_id {passage.passage_id!r}")
        if passage.length == 0:
            raise ValueError(f"empty passage {passage.passage_id!r}")
        passage_ids.append(passage.passage_id)
        lengths.append(passage.length)
        counts: dict[str, int] = {}
        for token in passage.tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((ref, tf))

    meta = IndexMeta(normalization=cfg, unit=unit, genre=genre)
    return Index(postings, passage_ids, lengths, meta)


def merge_indexes(a: Index, b: Index) -> Index:
    """Union of two disjoint collections built with identical analysis.

    Statistics are additive (N, total_tokens, per-term df and cf) and
    internal ids are re-assigned in global passage_id sort order, so the
    merge equals a from-scratch build over the combined passages.
    """
    if not a.meta.analysis_compatible(b.meta):
        raise ValueError("config mismatch: indexes built with different analysis settings")
    overlap = set(a.passage_ids) & set(b.passage_ids)
    if overlap:
        raise ValueError(f"passage_id collision: {sorted(overlap)[:5]}")

    combined = sorted(
        [(pid, "a", ref) for ref, pid in enumerate(a.passage_ids)]
        + [(pid, "b", ref) for ref, pid in enumerate(b.passage_ids)],
        key=lambda item: item[0],
    )
    remap = {"a": {}, "b": {}}
    passage_ids: list[str] = []
    lengths: list[int] = []
    for new_ref, (pid, side, old_ref) in enumerate(combined):
        remap[side][old_ref] = new_ref
        passage_ids.append(pid)
        lengths.append((a if side == "a" else b).lengths[old_ref])

    postings: dict[str, list[tuple[int, int]]] = {}
    for term in set(a.postings) | set(b.postings):
        merged = [(remap["a"][ref], tf) for ref, tf in a.postings.get(term, [])]
        merged += [(remap["b"][ref], tf) for ref, tf in b.postings.get(term, [])]
        merged.sort(key=lambda posting: posting[0])
        postings[term] = merged

    genre = a.meta.genre if a.meta.genre == b.meta.genre else MERGED_LABEL
    meta = IndexMeta(normalization=a.meta.normalization, unit=a.meta.unit, genre=genre)
    return Index(postings, passage_ids, lengths, meta)


def _write_uvarint(out: bytearray, value: int) -> None:
    if value < 0:
        raise ValueError("varint must be non-negative")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_uvarint(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise IndexFormatError("truncated varint")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def _check_magic(data: bytes, magic: bytes, filename: str) -> int:
    if data[: len(magic)] != magic:
        raise IndexFormatError(f"{filename}: bad magic bytes, not an index file")
    version, pos = _read_uvarint(data, len(magic))
    if version != FORMAT_VERSION:
        raise IndexFormatError(
            f"{filename}: format version mismatch (expected {FORMAT_VERSION}, found {version})"
        )
    return pos


def persist(index: Index, path: str | Path) -> None:
    """Write the index directory: meta.json, postings.bin, idmap.bin."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    meta = {
        "format_version": index.meta.format_version,
        "unit": index.meta.unit.value,
        "genre": index.meta.genre,
        "normalization": index.meta.normalization.to_dict(),
        "stemming": "none",
        "passage_count": index.stats.passage_count,
        "total_tokens": index.stats.total_tokens,
        "vocabulary_size": len(index.postings),
    }
    (path / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    postings_buf = bytearray(POSTINGS_MAGIC)
    _write_uvarint(postings_buf, FORMAT_VERSION)
    _write_uvarint(postings_buf, len(index.postings))
    for term in sorted(index.postings):
        raw = term.encode("utf-8")
        _write_uvarint(postings_buf, len(raw))
        postings_buf.extend(raw)
        plist = index.postings[term]
        _write_uvarint(postings_buf, len(plist))
        prev_ref = 0
        for i, (ref, tf) in enumerate(plist):
            _write_uvarint(postings_buf, ref if i == 0 else ref - prev_ref)
            _write_uvarint(postings_buf, tf)
            prev_ref = ref
    (path / "postings.bin").write_bytes(bytes(postings_buf))

    idmap_buf = bytearray(IDMAP_MAGIC)
    _write_uvarint(idmap_buf, FORMAT_VERSION)
    _write_uvarint(idmap_buf, len(index.passage_ids))
    for pid, length in zip(index.passage_ids, index.lengths):
        raw = pid.encode("utf-8")
        _write_uvarint(idmap_buf, len(raw))
        idmap_buf.extend(raw)
        _write_uvarint(idmap_buf, length)
    (path / "idmap.bin").write_bytes(bytes(idmap_buf))


def load(path: str | Path) -> Index:
    """Load a persisted index; round-trips exactly with :func:`persist`."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise IndexFormatError(f"no index at {path} (missing meta.json)")
    meta_raw = json.loads(meta_path.read_text(encoding="utf-8"))
    found_version = meta_raw.get("format_version")
    if found_version != FORMAT_VERSION:
        raise IndexFormatError(
            f"meta.json: format version mismatch (expected {FORMAT_VERSION}, found {found_version})"
        )
    if meta_raw.get("stemming", "none") != "none":
        raise IndexFormatError(
            f"unsupported stemming setting {meta_raw.get('stemming')!r} (this build supports 'none')"
        )
    meta = IndexMeta(
        normalization=NormalizationConfig.from_dict(meta_raw["normalization"]),
        unit=SegmentUnit(meta_raw["unit"]),
        genre=meta_raw["genre"],
    )

    idmap_raw = (path / "idmap.bin").read_bytes()
    pos = _check_magic(idmap_raw, IDMAP_MAGIC, "idmap.bin")
    count, pos = _read_uvarint(idmap_raw, pos)
    passage_ids: list[str] = []
    lengths: list[int] = []
    for _ in range(count):
        id_len, pos = _read_uvarint(idmap_raw, pos)
        passage_ids.append(idmap_raw[pos : pos + id_len].decode("utf-8"))
        pos += id_len
        length, pos = _read_uvarint(idmap_raw, pos)
        lengths.append(length)

    postings_raw = (path / "postings.bin").read_bytes()
    pos = _check_magic(postings_raw, POSTINGS_MAGIC, "postings.bin")
    term_count, pos = _read_uvarint(postings_raw, pos)
    postings: dict[str, list[tuple[int, int]]] = {}
    for _ in range(term_count):
        term_len, pos = _read_uvarint(postings_raw, pos)
        term = postings_raw[pos : pos + term_len].decode("utf-8")
        pos += term_len
        df, pos = _read_uvarint(postings_raw, pos)
        plist: list[tuple[int, int]] = []
        ref = 0
        for i in range(df):
            delta, pos = _read_uvarint(postings_raw, pos)
            ref = delta if i == 0 else ref + delta
            tf, pos = _read_uvarint(postings_raw, pos)
            plist.append((ref, tf))
        postings[term] = plist

    index = Index(postings, passage_ids, lengths, meta)
    if index.stats.passage_count != meta_raw["passage_count"] or (
        index.stats.total_tokens != meta_raw["total_tokens"]
    ):
        raise IndexFormatError("meta.json counts disagree with binary payload")
    return index
