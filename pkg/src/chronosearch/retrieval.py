"""BM25 scoring and ranking, for plain and weighted-term queries.

The scoring variant is the non-negative one:

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
    score(D, Q) = sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl/avgdl))

Weighted queries (the output of feedback expansion) score each term's
BM25 contribution multiplied by its expansion weight. Ties are broken
by passage_id ascending so run files are byte-reproducible.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .corpus import NormalizationConfig, analyze
from .invindex import Index


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


@dataclass
class Query:
    qid: str
    text: str
    terms: list[str]

    @property
    def unanswerable(self) -> bool:
        return not self.terms


@dataclass
class WeightedQuery:
    qid: str
    weights: dict[str, float]

    def __post_init__(self):
        if not self.weights:
            raise ValueError("weighted query needs at least one term")
        for term, weight in self.weights.items():
            if not math.isfinite(weight) or weight < 0:
                raise ValueError(f"weight for {term!r} must be finite and >= 0")
        if all(weight == 0 for weight in self.weights.values()):
            raise ValueError("weighted query needs at least one positive weight")


@dataclass(frozen=True)
class ScoredHit:
    passage_id: str
    score: float
    rank: int


def analyze_query(qid: str, text: str, cfg: NormalizationConfig) -> Query:
    """Analyze raw query text with the same pipeline the index used."""
    return Query(qid=qid, text=text, terms=analyze(text, cfg))


def idf(index: Index, term: str) -> float:
    n = index.stats.passage_count
    df = index.stats.df.get(term, 0)
    return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def _tf_component(tf: int, dl: int, avgdl: float, params: BM25Params) -> float:
    return tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl))


def bm25_score(
    index: Index,
    passage_ref: int,
    query: Query,
    params: BM25Params = BM25Params(),
) -> float:
    """Score a single passage directly; duplicate query terms count once each."""
    dl = index.lengths[passage_ref]
    avgdl = index.stats.avgdl
    score = 0.0
    for term in query.terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        tf = _lookup_tf(plist, passage_ref)
        if tf == 0:
            continue
        score += idf(index, term) * _tf_component(tf, dl, avgdl, params)
    return score


def _lookup_tf(plist: Sequence[tuple[int, int]], ref: int) -> int:
    lo, hi = 0, len(plist)
    while lo < hi:
        mid = (lo + hi) // 2
        if plist[mid][0] < ref:
            lo = mid + 1
        else:
            hi = mid
    if lo < len(plist) and plist[lo][0] == ref:
        return plist[lo][1]
    return 0


def _rank(accumulator: dict[int, float], index: Index, k: int) -> list[ScoredHit]:
    candidates = (
        (index.passage_ids[ref], score) for ref, score in accumulator.items()
    )
    top = heapq.nsmallest(k, candidates, key=lambda item: (-item[1], item[0]))
    return [ScoredHit(pid, score, rank) for rank, (pid, score) in enumerate(top, start=1)]


def search(
    index: Index,
    query: Query,
    k: int,
    params: BM25Params = BM25Params(),
) -> list[ScoredHit]:
    """Top-k passages by BM25; unanswerable queries return an empty list."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if query.unanswerable:
        return []
    accumulator: dict[int, float] = {}
    avgdl = index.stats.avgdl
    for term in query.terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        term_idf = idf(index, term)
        for ref, tf in plist:
            contribution = term_idf * _tf_component(tf, index.lengths[ref], avgdl, params)
            accumulator[ref] = accumulator.get(ref, 0.0) + contribution
    return _rank(accumulator, index, k)


def search_weighted(
    index: Index,
    wq: WeightedQuery,
    k: int,
    params: BM25Params = BM25Params(),
) -> list[ScoredHit]:
    """Top-k with per-term multiplicative boosts; ranking is invariant to
    positive rescaling of the weight vector."""
    if k < 1:
        raise ValueError("k must be >= 1")
    accumulator: dict[int, float] = {}
    avgdl = index.stats.avgdl
    for term in sorted(wq.weights):
        weight = wq.weights[term]
        if weight == 0.0:
            continue
        plist = index.postings.get(term)
        if not plist:
            continue
        term_idf = idf(index, term)
        for ref, tf in plist:
            contribution = weight * term_idf * _tf_component(tf, index.lengths[ref], avgdl, params)
            accumulator[ref] = accumulator.get(ref, 0.0) + contribution
    return _rank(accumulator, index, k)


def write_run(path: str | Path, hits_by_qid: Mapping[str, Sequence[ScoredHit]], run_tag: str) -> None:
    """Emit a TREC-format run file, scores at 6 decimal places."""
    lines = []
    for qid in sorted(hits_by_qid):
        for hit in hits_by_qid[qid]:
            lines.append(f"{qid} Q0 {hit.passage_id} {hit.rank} {hit.score:.6f} {run_tag}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
