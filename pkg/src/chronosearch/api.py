"""Read-only HTTP/JSON service for interactive exploration.

Endpoints: GET /collections, POST /search, GET /qrels/{qid},
GET /topics. Indexes are loaded once at startup and never mutated, so
concurrent requests are safe. Index building stays in the CLI.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .corpus import ingest_corpus, segment_paragraphs
from .evalkit import load_qrels
from .feedback import POLICIES, FeedbackParams, expand_query
from .harness import BASE_RETRIEVAL_GENRE
from .invindex import Index, load
from .judging import load_topics
from .retrieval import BM25Params, analyze_query, search, search_weighted

logger = logging.getLogger(__name__)

SNIPPET_CHARS = 280


class SearchRequest(BaseModel):
    query: str
    policy: str = "NonFiction_base"
    M: int = 10
    T: int = 20
    alpha: float = 0.5
    depth: int = 10


def _build_snippet_store(
    corpus_path: str | Path, indexes: Mapping[str, Index]
) -> Dict[str, dict]:
    """Map passage_id to display text by re-segmenting the raw corpus
    with the same unit and analysis settings the indexes were built with."""
    store: Dict[str, dict] = {}
    units = {index.meta.unit for index in indexes.values()}
    cfg = next(iter(indexes.values())).meta.normalization
    for unit in units:
        for doc in ingest_corpus(corpus_path):
            for passage in segment_paragraphs(doc, unit, cfg):
                snippet = passage.text[:SNIPPET_CHARS]
                store[passage.passage_id] = {
                    "snippet": snippet,
                    "doc_id": doc.doc_id,
                    "title": doc.title,
                    "genre": doc.genre.value,
                    "year": doc.year,
                }
    return store


def create_app(
    index_dirs: Mapping[str, str | Path],
    topics_path: Optional[str | Path] = None,
    qrels_path: Optional[str | Path] = None,
    corpus_path: Optional[str | Path] = None,
    bm25: Optional[BM25Params] = None,
    mu: float = 1000.0,
    ui_dir: Optional[str | Path] = None,
) -> FastAPI:
    """Assemble the service around already-built index directories.

    ``ui_dir`` optionally mounts a built explorer page (an index.html
    plus its assets) at the root so the browser client and the JSON
    endpoints share one origin. API routes take precedence.
    """
    indexes: Dict[str, Index] = {genre: load(path) for genre, path in sorted(index_dirs.items())}
    if not indexes:
        raise ValueError("serve needs at least one index")
    topics = load_topics(topics_path) if topics_path else []
    qrels = load_qrels(qrels_path) if qrels_path else None
    snippets = _build_snippet_store(corpus_path, indexes) if corpus_path else {}
    bm25 = bm25 or BM25Params()

    app = FastAPI(title="chronosearch", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def handle_validation(request: Request, exc: RequestValidationError) -> JSONResponse:
        detail = [{"loc": list(e.get("loc", [])), "msg": e.get("msg", "")} for e in exc.errors()]
        return JSONResponse(status_code=400, content={"error": "invalid request", "detail": detail})

    def bad_request(reason: str) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": reason})

    @app.get("/collections")
    def collections() -> List[dict]:
        return [
            {
                "genre": genre,
                "unit": index.meta.unit.value,
                "passages": index.stats.passage_count,
                "total_tokens": index.stats.total_tokens,
                "vocabulary": len(index.postings),
            }
            for genre, index in sorted(indexes.items())
        ]

    @app.get("/topics")
    def topics_endpoint() -> List[dict]:
        return [{"qid": t.qid, "query": t.query, "variants": t.variants} for t in topics]

    @app.get("/qrels/{qid}")
    def qrels_endpoint(qid: str):
        if qrels is None:
            return JSONResponse(status_code=404, content={"error": "no qrels loaded"})
        if qid not in qrels.grades:
            return JSONResponse(status_code=404, content={"error": f"no judgments for {qid!r}"})
        judgments = [
            {"passage_id": pid, "grade": grade}
            for pid, grade in sorted(qrels.grades[qid].items())
        ]
        return {"qid": qid, "judgments": judgments}

    @app.post("/search")
    def search_endpoint(request: SearchRequest):
        started = time.perf_counter()
        policy_id = request.policy
        if policy_id not in POLICIES:
            return bad_request(f"unknown policy {policy_id!r}")
        if request.depth < 1:
            return bad_request("depth must be >= 1")
        policy = POLICIES[policy_id]
        target_genre = policy.retrieval_target if policy else BASE_RETRIEVAL_GENRE
        needed = (
            {policy.feedback_source, policy.target_vocab, policy.retrieval_target}
            if policy
            else {target_genre}
        )
        missing = sorted(needed - set(indexes))
        if missing:
            return bad_request(f"policy {policy_id!r} needs unavailable indexes: {missing}")

        target = indexes[target_genre]
        query = analyze_query("adhoc", request.query, target.meta.normalization)
        expansion_payload: dict = {"fallback": False, "fallback_reason": None, "terms": []}
        if query.unanswerable:
            hits = []
        elif policy is None:
            hits = search(target, query, request.depth, bm25)
        else:
            try:
                params = FeedbackParams(
                    feedback_docs=request.M,
                    expansion_terms=request.T,
                    alpha=request.alpha,
                    mu=mu,
                )
            except ValueError as exc:
                return bad_request(str(exc))
            expansion = expand_query(query, policy, params, indexes, bm25)
            expansion_payload = {
                "fallback": expansion.fallback,
                "fallback_reason": expansion.fallback_reason,
                "terms": [
                    {"term": t.term, "weight": t.weight, "kept": t.kept}
                    for t in expansion.terms
                ],
            }
            hits = search_weighted(target, expansion.weighted_query, request.depth, bm25)

        elapsed_ms = (time.perf_counter() - started) * 1000.0
        hit_payload = []
        for hit in hits:
            entry = {"passage_id": hit.passage_id, "rank": hit.rank, "score": hit.score}
            if hit.passage_id in snippets:
                entry.update(snippets[hit.passage_id])
            hit_payload.append(entry)
        return {
            "query": request.query,
            "policy": policy_id,
            "params": {
                "M": request.M,
                "T": request.T,
                "alpha": request.alpha,
                "depth": request.depth,
            },
            "unanswerable": query.unanswerable,
            "hits": hit_payload,
            "expansion": expansion_payload,
            "timing_ms": round(elapsed_ms, 3),
        }

    if ui_dir is not None:
        from starlette.staticfiles import StaticFiles

        ui_path = Path(ui_dir)
        if not (ui_path / "index.html").is_file():
            raise ValueError(f"ui dir {ui_path} has no index.html (build the explorer first)")
        app.mount("/", StaticFiles(directory=ui_path, html=True), name="ui")

    return app
