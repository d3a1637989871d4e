"""Benchmark construction: pooling candidates over query variants,
machine grading on the 0-4 scale, seeded verification sampling, and
expert override with agreement tallies.

Every remote grading call is cached in a content-addressed transcript
file, so the whole pipeline can replay offline and reproduce its qrels
byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Protocol

import requests

from .corpus import NormalizationConfig
from .evalkit import QrelSet
from .invindex import Index
from .retrieval import BM25Params, analyze_query, search

logger = logging.getLogger(__name__)

POOL_DEPTH = 100
VERIFICATION_FRACTION = 0.40

ENDPOINT_ENV = "ASSESSOR_ENDPOINT"
MODEL_ENV = "ASSESSOR_MODEL"
API_KEY_ENV = "ASSESSOR_API_KEY"

GRADE_PATTERN = re.compile(r"Grade:\s*([0-4])")

DEFAULT_INSTRUCTIONS = """\
You are assessing how well a passage from an 18th or 19th century text answers
a present-day research query about cultural history. Judge interpretive and
cultural relevance, not just word overlap: a passage that depicts or discusses
the practice, custom, or attitude the query asks about is relevant even when
it uses period vocabulary.

Grade on this scale:
4 = central, substantive treatment of the query topic
3 = clearly relevant, the topic is discussed but not the main focus
2 = partially relevant, touches the topic in passing
1 = marginally relevant, weak or indirect connection
0 = not relevant

Answer with a line of the exact form "Grade: <0-4>", then one sentence of
justification.
"""

RETRY_NUDGE = (
    "\nYour previous answer could not be parsed. Reply with the grade line "
    'first, exactly "Grade: <0-4>".'
)


class AssessorKind(str, Enum):
    MACHINE = "machine"
    EXPERT = "expert"


@dataclass
class TopicSpec:
    """A benchmark query: canonical phrasing plus alternative variants."""

    qid: str
    query: str
    variants: List[str] = field(default_factory=list)


def load_topics(path: str | Path) -> List[TopicSpec]:
    """Read topics from JSON Lines ``{qid, query, variants[]}``."""
    path = Path(path)
    topics: List[TopicSpec] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from None
            qid = record.get("qid")
            query = record.get("query")
            if not qid or not isinstance(qid, str):
                raise ValueError(f"{path}:{line_no}: missing qid")
            if not query or not isinstance(query, str):
                raise ValueError(f"{path}:{line_no}: missing query")
            if qid in seen:
                raise ValueError(f"{path}:{line_no}: duplicate qid {qid!r}")
            seen.add(qid)
            variants = record.get("variants", [])
            if not isinstance(variants, list) or any(not isinstance(v, str) for v in variants):
                raise ValueError(f"{path}:{line_no}: variants must be a list of strings")
            topics.append(TopicSpec(qid=qid, query=query, variants=list(variants)))
    return topics


@dataclass
class Judgment:
    """One relevance decision; grade None means the response never parsed."""

    qid: str
    passage_id: str
    grade: Optional[int]
    assessor: AssessorKind
    rationale: Optional[str] = None

    def __post_init__(self) -> None:
        if self.grade is not None and (self.grade != int(self.grade) or not 0 <= self.grade <= 4):
            raise ValueError(f"grade {self.grade} outside 0-4")

    def key(self) -> tuple[str, str]:
        return (self.qid, self.passage_id)


class AssessorClient(Protocol):
    """Anything that can turn (query, passage, instructions) into a reply."""

    def submit(self, query: str, passage_text: str, instructions: str) -> str: ...


class HttpChatAssessor:
    """Chat-completions client for a remote grading model.

    Endpoint, model name, and credential come from the environment
    (ASSESSOR_ENDPOINT, ASSESSOR_MODEL, ASSESSOR_API_KEY) unless passed
    explicitly. The credential is sent as a bearer token only; it never
    appears in transcripts.
    """

    def __init__(
        self,
        endpoint: Optional[str] = None,
        model: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
    ) -> None:
        import os

        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        self.model = model or os.environ.get(MODEL_ENV, "")
        self._api_key = api_key or os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout
        if not self.endpoint:
            raise ValueError(f"no assessor endpoint (set {ENDPOINT_ENV})")

    def submit(self, query: str, passage_text: str, instructions: str) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": instructions},
                {"role": "user", "content": f"Query: {query}\n\nPassage:\n{passage_text}"},
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        response = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        response.raise_for_status()
        body = response.json()
        return body["choices"][0]["message"]["content"]


class TranscriptCachingAssessor:
    """Caches every grading exchange in content-addressed JSON files.

    The cache key is a sha256 over (instructions, passage, query), so a
    replay of the same pool with the same instructions hits the cache
    and never touches the wrapped client. With ``replay_only`` set (or
    no inner client at all) a cache miss is an error instead of a call.
    """

    def __init__(
        self,
        cache_dir: str | Path,
        inner: Optional[AssessorClient] = None,
        replay_only: bool = False,
    ) -> None:
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.inner = inner
        self.replay_only = replay_only
        self.calls_made = 0
        self._lock = threading.Lock()

    @staticmethod
    def content_key(query: str, passage_text: str, instructions: str) -> str:
        request = {"instructions": instructions, "passage": passage_text, "query": query}
        blob = json.dumps(request, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def submit(self, query: str, passage_text: str, instructions: str) -> str:
        key = self.content_key(query, passage_text, instructions)
        transcript_path = self.cache_dir / f"{key}.json"
        if transcript_path.exists():
            record = json.loads(transcript_path.read_text(encoding="utf-8"))
            return record["response"]
        if self.replay_only or self.inner is None:
            raise LookupError(f"no cached transcript {key} and replay-only mode is on")
        response = self.inner.submit(query, passage_text, instructions)
        record = {
            "key": key,
            "query": query,
            "passage": passage_text,
            "instructions": instructions,
            "response": response,
        }
        with self._lock:
            self.calls_made += 1
            tmp = transcript_path.with_suffix(".tmp")
            tmp.write_text(
                json.dumps(record, sort_keys=True, ensure_ascii=False, indent=2),
                encoding="utf-8",
            )
            tmp.replace(transcript_path)
        return response


@dataclass
class Pool:
    """Candidate passages for one topic, with which phrasing found each."""

    qid: str
    passage_ids: List[str]
    provenance: Dict[str, List[str]]
    all_unanswerable: bool = False


def pool_candidates(
    topic: TopicSpec,
    index: Index,
    k: int = POOL_DEPTH,
    params: Optional[BM25Params] = None,
    cfg: Optional[NormalizationConfig] = None,
) -> Pool:
    """Union the BM25 top-k for the canonical query and every variant."""
    params = params or BM25Params()
    cfg = cfg or index.meta.normalization
    provenance: Dict[str, List[str]] = {}
    labelled = [("canonical", topic.query)]
    labelled += [(f"variant{i}", text) for i, text in enumerate(topic.variants, start=1)]
    any_answerable = False
    for label, text in labelled:
        query = analyze_query(topic.qid, text, cfg)
        if query.unanswerable:
            logger.warning("topic %s: %s has no index terms", topic.qid, label)
            continue
        any_answerable = True
        for hit in search(index, query, k, params):
            provenance.setdefault(hit.passage_id, []).append(label)
    if not any_answerable:
        logger.warning("topic %s: every phrasing unanswerable, empty pool", topic.qid)
    return Pool(
        qid=topic.qid,
        passage_ids=sorted(provenance),
        provenance=provenance,
        all_unanswerable=not any_answerable,
    )


def parse_grade(response: str) -> tuple[Optional[int], Optional[str]]:
    """Extract the grade from a ``Grade: <0-4>`` line plus trailing rationale."""
    match = GRADE_PATTERN.search(response)
    if match is None:
        return None, None
    rest = response[match.end() :]
    rationale = re.sub(r"^[\s:,.\-–—]+", "", rest).strip() or None
    return int(match.group(1)), rationale


def grade_pool(
    pool: Pool,
    topic: TopicSpec,
    client: AssessorClient,
    texts: Mapping[str, str],
    instructions: str = DEFAULT_INSTRUCTIONS,
    max_workers: int = 1,
) -> List[Judgment]:
    """Grade every pooled passage with the machine assessor.

    An unparseable reply is retried once with a nudged instruction
    block; if that also fails the judgment is kept with grade missing
    and the raw reply preserved. A client error likewise yields a
    grade-missing judgment rather than aborting the pool. Output is
    ordered by passage_id so concurrent grading stays deterministic.
    """

    def grade_one(passage_id: str) -> Judgment:
        passage_text = texts[passage_id]
        try:
            response = client.submit(topic.query, passage_text, instructions)
            grade, rationale = parse_grade(response)
            if grade is None:
                response = client.submit(topic.query, passage_text, instructions + RETRY_NUDGE)
                grade, rationale = parse_grade(response)
        except (LookupError, OSError, requests.RequestException) as exc:
            logger.warning("grading %s/%s failed: %s", topic.qid, passage_id, exc)
            return Judgment(topic.qid, passage_id, None, AssessorKind.MACHINE, str(exc))
        if grade is None:
            logger.warning("grading %s/%s: unparseable after retry", topic.qid, passage_id)
            return Judgment(topic.qid, passage_id, None, AssessorKind.MACHINE, response.strip())
        return Judgment(topic.qid, passage_id, grade, AssessorKind.MACHINE, rationale)

    ordered_ids = sorted(pool.passage_ids)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool_exec:
            judgments = list(pool_exec.map(grade_one, ordered_ids))
    else:
        judgments = [grade_one(pid) for pid in ordered_ids]
    return judgments


def sample_for_verification(
    judgments: List[Judgment],
    fraction: float = VERIFICATION_FRACTION,
    seed: int = 0,
) -> List[Judgment]:
    """Seeded uniform sample of round(fraction * n) judgments.

    Python's round-half-to-even keeps the sample size platform-stable.
    The population is sorted by (qid, passage_id) before sampling so
    the subset depends only on the seed, not on input order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside (0, 1]")
    ordered = sorted(judgments, key=Judgment.key)
    size = round(fraction * len(ordered))
    subset = random.Random(seed).sample(ordered, size)
    return sorted(subset, key=Judgment.key)


@dataclass
class AgreementReport:
    """Tallies from the expert verification pass."""

    sampled_fraction: float = VERIFICATION_FRACTION
    n_sampled: int = 0
    exact_match_count: int = 0
    adjacent_disagreement_count: int = 0
    resolved_by_expert_count: int = 0

    @property
    def exact_match_rate(self) -> float:
        return self.exact_match_count / self.n_sampled if self.n_sampled else 0.0

    def to_dict(self) -> dict:
        return {
            "sampled_fraction": self.sampled_fraction,
            "n_sampled": self.n_sampled,
            "exact_match_rate": self.exact_match_rate,
            "exact_match_count": self.exact_match_count,
            "adjacent_disagreement_count": self.adjacent_disagreement_count,
            "resolved_by_expert_count": self.resolved_by_expert_count,
        }


def resolve(machine: Judgment, expert: Judgment, report: AgreementReport) -> Judgment:
    """Apply the expert's grade over the machine's, updating the tallies."""
    if machine.key() != expert.key():
        raise ValueError(f"judgment keys differ: {machine.key()} vs {expert.key()}")
    if expert.grade is None:
        raise ValueError("expert judgment has no grade")
    report.n_sampled += 1
    if machine.grade == expert.grade:
        report.exact_match_count += 1
        return machine
    report.resolved_by_expert_count += 1
    if machine.grade is not None and abs(machine.grade - expert.grade) == 1:
        report.adjacent_disagreement_count += 1
    return expert


def build_qrels(judgments: List[Judgment]) -> QrelSet:
    """Collect graded judgments into a QrelSet, skipping grade-missing ones."""
    qrels = QrelSet()
    for judgment in sorted(judgments, key=Judgment.key):
        if judgment.grade is None:
            continue
        qrels.add(judgment.qid, judgment.passage_id, judgment.grade)
    return qrels


def write_agreement(path: str | Path, report: AgreementReport) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
