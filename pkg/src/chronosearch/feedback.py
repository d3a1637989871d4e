"""Relevance-model feedback (RM1/RM3) and cross-genre query expansion.

The relevance model is estimated from the top-ranked passages of a
first-pass BM25 search, with Dirichlet-smoothed passage language models:

    P(w|R) ~ sum_D P(w|D) * prod_{q in Q} P(q|D)
    P(w|D) = (tf(w,D) + mu * cf(w)/total_tokens) / (dl + mu)

RM3 interpolates the feedback model with the query's maximum-likelihood
model. Cross-genre transfer estimates the model on one collection
(fiction), truncates it to the highest-weighted terms, then keeps only
terms that also occur in the target collection's vocabulary while
preserving the source-side weights -- candidate terms are ranked and
weighted by the feedback collection, selected by the target collection.

Stage order is fixed: search -> RM1 -> RM3 -> truncate -> vocabulary
filter. Every run records it alongside the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .invindex import Index, vocabulary_contains
from .retrieval import BM25Params, Query, WeightedQuery, search

STAGE_ORDER = ("search", "rm1", "rm3", "truncate", "vocab_filter")


class FeedbackError(Exception):
    """Raised when a feedback model cannot be estimated for a query."""


class EmptyExpansionError(FeedbackError):
    """Raised when the vocabulary filter leaves no expansion terms."""


@dataclass(frozen=True)
class FeedbackParams:
    """Knobs of the expansion pipeline.

    ``feedback_docs`` is the number of top-ranked passages the model is
    estimated from; ``expansion_terms`` the truncation size. ``alpha``
    mixes the original query model into the feedback model (1.0 keeps
    only the query); ``mu`` is the Dirichlet smoothing mass.
    """

    feedback_docs: int = 10
    expansion_terms: int = 20
    alpha: float = 0.5
    mu: float = 1000.0

    def __post_init__(self):
        if self.feedback_docs < 1:
            raise ValueError("feedback_docs must be >= 1")
        if self.expansion_terms < 1:
            raise ValueError("expansion_terms must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.mu < 0.0:
            raise ValueError("mu must be >= 0")

    def to_dict(self) -> dict:
        return {
            "M": self.feedback_docs,
            "T": self.expansion_terms,
            "alpha": self.alpha,
            "mu": self.mu,
        }


@dataclass(frozen=True)
class TransferPolicy:
    """Which collection plays which role in one expansion configuration."""

    feedback_source: str
    target_vocab: str
    retrieval_target: str


# The four benchmark configurations. NonFiction_base runs plain BM25 and
# has no policy; for NonFiction_RLM the vocabulary filter is a no-op by
# construction since source and target coincide.
POLICIES: dict[str, Optional[TransferPolicy]] = {
    "NonFiction_base": None,
    "NonFiction_RLM": TransferPolicy("nonfiction", "nonfiction", "nonfiction"),
    "Fiction_RLM": TransferPolicy("fiction", "nonfiction", "nonfiction"),
    "FictionNonFiction_RLM": TransferPolicy("merged", "nonfiction", "nonfiction"),
}

CONFIG_IDS = tuple(POLICIES)


@dataclass
class RelevanceModel:
    """A normalized term distribution: all weights positive, summing to 1."""

    weights: dict[str, float]
    source: str
    params: FeedbackParams

    def validate(self, tolerance: float = 1e-9) -> None:
        if not self.weights:
            raise FeedbackError("relevance model has no terms")
        if any(w <= 0 for w in self.weights.values()):
            raise FeedbackError("relevance model contains non-positive weights")
        total = sum(self.weights.values())
        if abs(total - 1.0) > tolerance:
            raise FeedbackError(f"relevance model sums to {total}, not 1")


def _normalized(weights: dict[str, float], source: str, params: FeedbackParams) -> RelevanceModel:
    positive = {term: w for term, w in weights.items() if w > 0.0}
    total = sum(positive.values())
    if total <= 0.0:
        raise FeedbackError("degenerate feedback")
    model = RelevanceModel(
        weights={term: w / total for term, w in positive.items()},
        source=source,
        params=params,
    )
    return model


def estimate_rm1(
    feedback_index: Index,
    query: Query,
    feedback_docs: int,
    mu: float,
    bm25: BM25Params = BM25Params(),
    params: Optional[FeedbackParams] = None,
) -> RelevanceModel:
    """Estimate the untruncated relevance model from top-ranked passages.

    With mu > 0 every term of the feedback collection receives positive
    probability; with mu = 0 only terms occurring in the feedback
    passages do. Query likelihoods multiply over query-term occurrences
    (terms absent from the collection vocabulary are skipped: they carry
    no evidence and would zero out every passage).
    """
    if params is None:
        params = FeedbackParams(feedback_docs=feedback_docs, mu=mu)
    hits = search(feedback_index, query, k=feedback_docs, params=bm25)
    if not hits:
        raise FeedbackError("no feedback documents")

    stats = feedback_index.stats
    total_tokens = stats.total_tokens
    refs = [feedback_index.ref_of(hit.passage_id) for hit in hits]
    vectors = feedback_index.doc_term_frequencies(refs)
    likelihood_terms = [t for t in query.terms if stats.cf.get(t, 0) > 0]

    # P(Q|D) per feedback passage.
    query_likelihood: dict[int, float] = {}
    for ref in refs:
        dl = feedback_index.lengths[ref]
        vector = vectors[ref]
        likelihood = 1.0
        for term in likelihood_terms:
            tf = vector.get(term, 0)
            likelihood *= (tf + mu * stats.cf[term] / total_tokens) / (dl + mu)
        query_likelihood[ref] = likelihood

    if mu == 0.0 and all(value == 0.0 for value in query_likelihood.values()):
        raise FeedbackError("degenerate feedback")

    # Split P(w|D) into its in-passage and smoothing components so the
    # full-vocabulary sweep stays linear in vocabulary size.
    weights: dict[str, float] = {}
    background_mass = 0.0
    for ref in refs:
        factor = query_likelihood[ref] / (feedback_index.lengths[ref] + mu)
        background_mass += factor
        for term, tf in vectors[ref].items():
            weights[term] = weights.get(term, 0.0) + tf * factor
    if mu > 0.0:
        smoothing = mu * background_mass / total_tokens
        for term, cf in stats.cf.items():
            weights[term] = weights.get(term, 0.0) + cf * smoothing

    return _normalized(weights, feedback_index.meta.genre, params)


def query_mle(query: Query) -> dict[str, float]:
    counts: dict[str, int] = {}
    for term in query.terms:
        counts[term] = counts.get(term, 0) + 1
    n = len(query.terms)
    return {term: count / n for term, count in counts.items()}


def apply_rm3(rm1: RelevanceModel, query: Query, alpha: float) -> RelevanceModel:
    """Interpolate the feedback model with the query's MLE model."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if alpha == 0.0:
        return RelevanceModel(dict(rm1.weights), rm1.source, rm1.params)
    mle = query_mle(query)
    if alpha == 1.0:
        return RelevanceModel(dict(mle), rm1.source, rm1.params)
    mixed = {
        term: alpha * mle.get(term, 0.0) + (1.0 - alpha) * rm1.weights.get(term, 0.0)
        for term in set(mle) | set(rm1.weights)
    }
    return _normalized(mixed, rm1.source, rm1.params)


def truncate_renormalize(rm: RelevanceModel, expansion_terms: int) -> RelevanceModel:
    """Keep the highest-weighted terms (ties: lexicographically smaller
    term wins) and renormalize."""
    if len(rm.weights) <= expansion_terms:
        return RelevanceModel(dict(rm.weights), rm.source, rm.params)
    kept = sorted(rm.weights.items(), key=lambda item: (-item[1], item[0]))[:expansion_terms]
    return _normalized(dict(kept), rm.source, rm.params)


def transfer_filter(rm: RelevanceModel, target: Index) -> RelevanceModel:
    """Drop terms outside the target collection's vocabulary; weights of
    the survivors still come from the feedback source."""
    survivors = {
        term: weight
        for term, weight in rm.weights.items()
        if vocabulary_contains(target, term)
    }
    if not survivors:
        raise EmptyExpansionError("no expansion terms survive the vocabulary filter")
    return _normalized(survivors, rm.source, rm.params)


@dataclass(frozen=True)
class ExpansionTerm:
    term: str
    weight: float  # feedback-source weight, after truncation, before filtering
    kept: bool


@dataclass
class ExpansionResult:
    weighted_query: WeightedQuery
    terms: list[ExpansionTerm] = field(default_factory=list)
    fallback: bool = False
    fallback_reason: Optional[str] = None
    policy: Optional[TransferPolicy] = None
    params: Optional[FeedbackParams] = None
    stage_order: tuple[str, ...] = STAGE_ORDER


def _original_query_weights(query: Query) -> dict[str, float]:
    weights: dict[str, float] = {}
    for term in query.terms:
        weights[term] = weights.get(term, 0.0) + 1.0
    return weights


def expand_query(
    query: Query,
    policy: TransferPolicy,
    params: FeedbackParams,
    indexes: Mapping[str, Index],
    bm25: BM25Params = BM25Params(),
) -> ExpansionResult:
    """Run the full expansion pipeline for one query.

    Any stage failure (no feedback passages, degenerate likelihoods,
    empty post-filter expansion) falls back to the unexpanded query --
    the benchmark must score every topic -- and the fallback is flagged
    with its reason.
    """
    if query.unanswerable:
        raise ValueError(f"query {query.qid!r} has no analyzable terms")
    for role in (policy.feedback_source, policy.target_vocab, policy.retrieval_target):
        if role not in indexes:
            raise KeyError(f"policy needs index {role!r}")

    target = indexes[policy.target_vocab]
    try:
        rm1 = estimate_rm1(
            indexes[policy.feedback_source],
            query,
            feedback_docs=params.feedback_docs,
            mu=params.mu,
            bm25=bm25,
            params=params,
        )
        rm3 = apply_rm3(rm1, query, params.alpha)
        truncated = truncate_renormalize(rm3, params.expansion_terms)
    except FeedbackError as exc:
        return ExpansionResult(
            weighted_query=WeightedQuery(query.qid, _original_query_weights(query)),
            fallback=True,
            fallback_reason=str(exc),
            policy=policy,
            params=params,
        )

    term_records = [
        ExpansionTerm(term, weight, kept=vocabulary_contains(target, term))
        for term, weight in sorted(truncated.weights.items(), key=lambda it: (-it[1], it[0]))
    ]
    try:
        final = transfer_filter(truncated, target)
    except EmptyExpansionError as exc:
        return ExpansionResult(
            weighted_query=WeightedQuery(query.qid, _original_query_weights(query)),
            terms=term_records,
            fallback=True,
            fallback_reason=str(exc),
            policy=policy,
            params=params,
        )

    return ExpansionResult(
        weighted_query=WeightedQuery(query.qid, dict(final.weights)),
        terms=term_records,
        policy=policy,
        params=params,
    )
