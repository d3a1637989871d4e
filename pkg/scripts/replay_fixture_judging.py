"""Replay the committed judging transcripts and audit the fixture qrels.

Rebuilds the non-fiction fixture index, grades every pooled passage
from the transcript cache without any assessor calls, applies the
committed expert verification sample, and compares the resulting qrels
byte for byte against tests/fixtures/qrels.txt.

    python3 scripts/replay_fixture_judging.py
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from chronosearch.corpus import NormalizationConfig, SegmentUnit, ingest_corpus, segment_paragraphs
from chronosearch.evalkit import load_qrels, write_qrels
from chronosearch.invindex import build_index
from chronosearch.judging import (
    AgreementReport,
    AssessorKind,
    Judgment,
    TranscriptCachingAssessor,
    build_qrels,
    grade_pool,
    load_topics,
    pool_candidates,
    resolve,
    sample_for_verification,
)

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
SEED = 7
FRACTION = 0.40


def main() -> int:
    cfg = NormalizationConfig()
    passages = []
    texts = {}
    for doc in ingest_corpus(FIXTURES / "corpus.jsonl"):
        if doc.genre.value != "nonfiction":
            continue
        for passage in segment_paragraphs(doc, SegmentUnit.PARAGRAPH, cfg):
            passages.append(passage)
            texts[passage.passage_id] = passage.text
    index = build_index(passages, cfg, SegmentUnit.PARAGRAPH)
    topics = load_topics(FIXTURES / "topics.jsonl")

    client = TranscriptCachingAssessor(FIXTURES / "transcripts", replay_only=True)
    machine: list[Judgment] = []
    for topic in topics:
        pool = pool_candidates(topic, index)
        machine.extend(grade_pool(pool, topic, client, texts))
    assert client.calls_made == 0
    print(f"{len(machine)} judgments replayed from cache, 0 assessor calls")

    sampled = sample_for_verification(machine, fraction=FRACTION, seed=SEED)
    expert_grades = load_qrels(FIXTURES / "expert_qrels.txt").grades
    agreement = AgreementReport(sampled_fraction=FRACTION)
    final_by_key = {j.key(): j for j in machine}
    for judgment in sampled:
        grade = expert_grades[judgment.qid][judgment.passage_id]
        expert = Judgment(judgment.qid, judgment.passage_id, grade, AssessorKind.EXPERT)
        final_by_key[judgment.key()] = resolve(judgment, expert, agreement)
    finals = sorted(final_by_key.values(), key=Judgment.key)
    print(
        f"agreement: {agreement.n_sampled} sampled, {agreement.exact_match_count} exact, "
        f"{agreement.adjacent_disagreement_count} adjacent, "
        f"{agreement.resolved_by_expert_count} overridden"
    )

    with tempfile.TemporaryDirectory() as tmp:
        replayed = Path(tmp) / "qrels.txt"
        write_qrels(replayed, build_qrels(finals))
        committed = (FIXTURES / "qrels.txt").read_bytes()
        if replayed.read_bytes() != committed:
            print("MISMATCH: replayed qrels differ from tests/fixtures/qrels.txt", file=sys.stderr)
            return 1
    print("replayed qrels match the committed fixture")
    return 0


if __name__ == "__main__":
    sys.exit(main())
