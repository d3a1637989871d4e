"""Independent reference implementations used to freeze expected values.

Everything here is written directly from the defining formulas, on
plain token lists and rankings, sharing no code with the package. Slow
and obvious beats fast and clever: these exist to catch bugs in the
real implementations, so they must not mirror their structure.
"""

from __future__ import annotations

import math
from typing import Dict, List, Mapping, Sequence, Tuple

import mpmath


# ---------------------------------------------------------------------------
# BM25 from the formula, straight off token lists.


def bm25_score_direct(
    doc_tokens: Sequence[str],
    all_docs: Mapping[str, Sequence[str]],
    query_terms: Sequence[str],
    k1: float = 1.2,
    b: float = 0.75,
) -> float:
    n = len(all_docs)
    avgdl = sum(len(t) for t in all_docs.values()) / n
    dl = len(doc_tokens)
    score = 0.0
    for term in query_terms:
        df = sum(1 for tokens in all_docs.values() if term in tokens)
        if df == 0:
            continue
        tf = sum(1 for t in doc_tokens if t == term)
        if tf == 0:
            continue
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl))
    return score


def bm25_rank_bruteforce(
    all_docs: Mapping[str, Sequence[str]],
    query_terms: Sequence[str],
    k: int,
    k1: float = 1.2,
    b: float = 0.75,
) -> List[Tuple[str, float]]:
    scored = []
    for pid, tokens in all_docs.items():
        score = bm25_score_direct(tokens, all_docs, query_terms, k1, b)
        if score > 0.0:
            scored.append((pid, score))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


# ---------------------------------------------------------------------------
# Relevance model by exhaustive enumeration over the whole vocabulary.


def rm1_bruteforce(
    feedback_docs: Mapping[str, Sequence[str]],
    collection: Mapping[str, Sequence[str]],
    query_terms: Sequence[str],
    mu: float,
) -> Dict[str, float]:
    total_tokens = sum(len(t) for t in collection.values())
    cf: Dict[str, int] = {}
    for tokens in collection.values():
        for t in tokens:
            cf[t] = cf.get(t, 0) + 1
    vocab = sorted(cf)

    def p_term_given_doc(term: str, tokens: Sequence[str]) -> float:
        tf = sum(1 for t in tokens if t == term)
        background = cf.get(term, 0) / total_tokens
        return (tf + mu * background) / (len(tokens) + mu)

    # Query likelihood uses only terms the collection has seen, so one
    # out-of-vocabulary word cannot zero every document.
    likelihood_terms = [q for q in query_terms if q in cf]
    weights: Dict[str, float] = {}
    for term in vocab:
        mass = 0.0
        for tokens in feedback_docs.values():
            q_lik = 1.0
            for q in likelihood_terms:
                q_lik *= p_term_given_doc(q, tokens)
            mass += p_term_given_doc(term, tokens) * q_lik
        if mass > 0.0:
            weights[term] = mass
    total = math.fsum(weights.values())
    if total <= 0.0:
        raise ValueError("degenerate feedback")
    return {t: w / total for t, w in weights.items()}


# ---------------------------------------------------------------------------
# Ranking metrics from their definitions.


def ap_direct(ranking: Sequence[str], grades: Mapping[str, int]) -> float:
    relevant = {pid for pid, g in grades.items() if g >= 1}
    hits = 0
    total = 0.0
    for i, pid in enumerate(ranking, start=1):
        if pid in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


def ndcg_direct(ranking: Sequence[str], grades: Mapping[str, int]) -> float:
    dcg = sum(grades.get(pid, 0) / math.log2(i + 1) for i, pid in enumerate(ranking, start=1))
    ideal = sorted(grades.values(), reverse=True)
    idcg = sum(g / math.log2(i + 1) for i, g in enumerate(ideal, start=1) if g > 0)
    return dcg / idcg


def precision_at_direct(ranking: Sequence[str], grades: Mapping[str, int], cutoff: int) -> float:
    return sum(1 for pid in ranking[:cutoff] if grades.get(pid, 0) >= 1) / cutoff


def rr_direct(ranking: Sequence[str], grades: Mapping[str, int]) -> float:
    for i, pid in enumerate(ranking, start=1):
        if grades.get(pid, 0) >= 1:
            return 1.0 / i
    return 0.0


def recall_direct(ranking: Sequence[str], grades: Mapping[str, int]) -> float:
    relevant = {pid for pid, g in grades.items() if g >= 1}
    return sum(1 for pid in ranking if pid in relevant) / len(relevant)


# ---------------------------------------------------------------------------
# Student-t two-sided p-value via the regularized incomplete beta
# function (mpmath), independent of scipy.


def paired_t_oracle(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    n = len(a)
    diffs = [x - y for x, y in zip(a, b)]
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    t = mean / math.sqrt(var / n)
    df = n - 1
    x = df / (df + t * t)
    p = float(mpmath.betainc(df / 2.0, 0.5, 0, x, regularized=True))
    return t, p


# ---------------------------------------------------------------------------
# Pooling as a literal set union.


def pool_union_oracle(ranked_lists: Sequence[Sequence[str]]) -> set:
    union: set = set()
    for ranking in ranked_lists:
        union |= set(ranking)
    return union
