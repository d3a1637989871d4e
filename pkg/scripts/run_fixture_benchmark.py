"""Run the four benchmark configurations on the bundled fixture corpus.

Builds fiction, non-fiction, and merged paragraph indexes under the
output directory, runs the benchmark against the committed fixture
qrels, and prints the effectiveness table.

    python3 scripts/run_fixture_benchmark.py --out /tmp/fixture_bench
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from chronosearch.corpus import NormalizationConfig, SegmentUnit, ingest_corpus, segment_paragraphs
from chronosearch.feedback import POLICIES, FeedbackParams
from chronosearch.harness import ExperimentConfig, emit_table, run_benchmark
from chronosearch.invindex import build_index, persist
from chronosearch.retrieval import BM25Params

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def build_fixture_indexes(out_dir: Path) -> dict[str, Path]:
    cfg = NormalizationConfig()
    passages = {"fiction": [], "nonfiction": []}
    for doc in ingest_corpus(FIXTURES / "corpus.jsonl"):
        passages[doc.genre.value].extend(segment_paragraphs(doc, SegmentUnit.PARAGRAPH, cfg))
    dirs = {}
    for genre in ("fiction", "nonfiction"):
        index = build_index(passages[genre], cfg, SegmentUnit.PARAGRAPH)
        persist(index, out_dir / "indexes" / genre)
        dirs[genre] = out_dir / "indexes" / genre
    merged = build_index(
        passages["fiction"] + passages["nonfiction"], cfg, SegmentUnit.PARAGRAPH, genre="merged"
    )
    persist(merged, out_dir / "indexes" / "merged")
    dirs["merged"] = out_dir / "indexes" / "merged"
    return dirs


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--depth", type=int, default=50)
    parser.add_argument("--feedback-docs", type=int, default=5, metavar="M")
    parser.add_argument("--expansion-terms", type=int, default=8, metavar="T")
    parser.add_argument("--alpha", type=float, default=0.5)
    parser.add_argument("--mu", type=float, default=1000.0)
    args = parser.parse_args()

    out_dir = Path(args.out)
    index_dirs = build_fixture_indexes(out_dir)
    configs = []
    for config_id, policy in POLICIES.items():
        feedback = None
        if policy is not None:
            feedback = FeedbackParams(
                feedback_docs=args.feedback_docs,
                expansion_terms=args.expansion_terms,
                alpha=args.alpha,
                mu=args.mu,
            )
        configs.append(
            ExperimentConfig(
                config_id=config_id,
                index_dirs=index_dirs,
                feedback=feedback,
                bm25=BM25Params(),
                depth=args.depth,
                qrels_path=FIXTURES / "qrels.txt",
                topics_path=FIXTURES / "topics.jsonl",
            )
        )
    report = run_benchmark(configs, out_dir / "bench")
    print(emit_table(report.to_dict()), end="")
    print(f"\nartifacts in {out_dir / 'bench'}")
    return 1 if any(o.error for o in report.outcomes.values()) else 0


if __name__ == "__main__":
    sys.exit(main())
