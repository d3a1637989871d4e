"""Command-line entry point.

Verbs: ``index`` (build an index from a corpus), ``judge`` (construct
qrels with the machine assessor), ``run`` (execute the benchmark
configurations), ``grid`` (parameter sweep), ``report`` (re-render
tables from a saved report), ``serve`` (HTTP API).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .corpus import (
    Genre,
    IngestReport,
    NormalizationConfig,
    SegmentUnit,
    ingest_corpus,
    segment_paragraphs,
)
from .evalkit import load_qrels, write_qrels
from .feedback import CONFIG_IDS, POLICIES
from .harness import (
    emit_per_query,
    emit_table,
    emit_terms,
    load_experiment_file,
    run_benchmark,
    run_grid,
)
from .invindex import MERGED_LABEL, build_index, load, persist
from .judging import (
    DEFAULT_INSTRUCTIONS,
    POOL_DEPTH,
    VERIFICATION_FRACTION,
    AgreementReport,
    AssessorKind,
    HttpChatAssessor,
    Judgment,
    TranscriptCachingAssessor,
    build_qrels,
    grade_pool,
    load_topics,
    pool_candidates,
    resolve,
    sample_for_verification,
    write_agreement,
)

logger = logging.getLogger(__name__)

_UNITS = {"doc": SegmentUnit.DOCUMENT, "para": SegmentUnit.PARAGRAPH}
_GENRES = {"fiction": Genre.FICTION, "nonfiction": Genre.NONFICTION, "merged": None}


def _load_stopwords(path: Optional[str]) -> Optional[frozenset]:
    if path is None:
        return None
    words = [w.strip() for w in Path(path).read_text(encoding="utf-8").splitlines()]
    return frozenset(w for w in words if w)


def _collect_passages(corpus: str, genre: str, unit: SegmentUnit, cfg: NormalizationConfig):
    report = IngestReport()
    passages = []
    for doc in ingest_corpus(corpus, genre_filter=_GENRES[genre], report=report):
        passages.extend(segment_paragraphs(doc, unit, cfg))
    return passages, report


def cmd_index(args: argparse.Namespace) -> int:
    cfg = NormalizationConfig(stopwords=_load_stopwords(args.stopwords))
    unit = _UNITS[args.unit]
    passages, report = _collect_passages(args.corpus, args.genre, unit, cfg)
    for problem in report.errors:
        logger.warning("skipped line %s: %s", problem["line"], problem["reason"])
    if not passages:
        print("no passages to index", file=sys.stderr)
        return 2
    genre = args.genre if args.genre == MERGED_LABEL else None
    index = build_index(passages, cfg, unit, genre=genre)
    persist(index, args.out)
    print(
        f"indexed {index.stats.passage_count} passages "
        f"({index.stats.total_tokens} tokens, {len(index.postings)} terms) "
        f"from {report.accepted} documents -> {args.out}"
    )
    if report.errors:
        print(f"{len(report.errors)} malformed records skipped (see log)", file=sys.stderr)
    return 0


def cmd_judge(args: argparse.Namespace) -> int:
    index = load(args.index)
    topics = load_topics(args.topics)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    # Grading needs passage text; rebuild it from the corpus with the
    # index's own unit and analysis settings.
    texts: Dict[str, str] = {}
    for doc in ingest_corpus(args.corpus):
        for passage in segment_paragraphs(doc, index.meta.unit, index.meta.normalization):
            texts[passage.passage_id] = passage.text

    inner = None
    if not args.replay_only:
        try:
            inner = HttpChatAssessor()
        except ValueError:
            logger.info("no assessor endpoint configured; cache-only grading")
    client = TranscriptCachingAssessor(args.cache, inner=inner, replay_only=args.replay_only)
    instructions = (
        Path(args.instructions).read_text(encoding="utf-8")
        if args.instructions
        else DEFAULT_INSTRUCTIONS
    )

    machine: List[Judgment] = []
    for topic in topics:
        pool = pool_candidates(topic, index, k=args.k)
        machine.extend(
            grade_pool(pool, topic, client, texts, instructions, max_workers=args.workers)
        )

    sampled = sample_for_verification(machine, fraction=args.fraction, seed=args.seed)
    agreement = AgreementReport(sampled_fraction=args.fraction)
    final_by_key = {j.key(): j for j in machine}
    if args.expert_qrels:
        expert_grades = load_qrels(args.expert_qrels)
        for judgment in sampled:
            grade = expert_grades.grades.get(judgment.qid, {}).get(judgment.passage_id)
            if grade is None:
                logger.warning("no expert grade for sampled pair %s", judgment.key())
                continue
            expert = Judgment(judgment.qid, judgment.passage_id, grade, AssessorKind.EXPERT)
            final_by_key[judgment.key()] = resolve(judgment, expert, agreement)
    elif sampled:
        logger.warning("%d judgments sampled but no expert qrels supplied", len(sampled))

    finals = sorted(final_by_key.values(), key=Judgment.key)
    write_qrels(out_dir / "qrels.txt", build_qrels(finals))
    write_agreement(out_dir / "agreement.json", agreement)
    with (out_dir / "judgments.jsonl").open("w", encoding="utf-8") as handle:
        for judgment in finals:
            handle.write(
                json.dumps(
                    {
                        "qid": judgment.qid,
                        "passage_id": judgment.passage_id,
                        "grade": judgment.grade,
                        "assessor": judgment.assessor.value,
                        "rationale": judgment.rationale,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
    print(
        f"judged {len(finals)} passages over {len(topics)} topics "
        f"({client.calls_made} assessor calls, {agreement.n_sampled} verified) -> {out_dir}"
    )
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    configs, meta = load_experiment_file(args.config)
    out_dir = Path(args.out) if args.out else meta["out_dir"]
    report = run_benchmark(configs, out_dir, include_timestamps=args.timestamp)
    print(emit_table(report.to_dict()), end="")
    failed = [cid for cid, out in report.outcomes.items() if out.error]
    if failed:
        print(f"failed configurations: {', '.join(sorted(failed))}", file=sys.stderr)
        return 1
    return 0


def _parse_grid_spec(spec: str) -> List[int]:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"bad grid spec {spec!r} (want start:stop:step)")
        start, stop, step = (int(p) for p in parts)
        return list(range(start, stop + 1, step))
    return [int(p) for p in spec.split(",") if p]


def cmd_grid(args: argparse.Namespace) -> int:
    configs, meta = load_experiment_file(args.config)
    chosen = next((c for c in configs if c.config_id == args.experiment), None)
    if chosen is None:
        print(f"experiment {args.experiment!r} not in config file", file=sys.stderr)
        return 2
    if chosen.feedback is None:
        print(f"{args.experiment} has no feedback parameters to sweep", file=sys.stderr)
        return 2
    kwargs = {}
    if args.docs:
        kwargs["docs_grid"] = _parse_grid_spec(args.docs)
    if args.terms:
        kwargs["terms_grid"] = _parse_grid_spec(args.terms)
    result = run_grid(
        args.experiment,
        meta["index_dirs"],
        meta["topics"],
        meta["qrels"],
        alpha=chosen.feedback.alpha,
        mu=chosen.feedback.mu,
        bm25=chosen.bm25,
        depth=chosen.depth,
        objective=args.objective,
        workers=args.workers,
        **kwargs,
    )
    Path(args.out).write_text(result.to_csv(), encoding="utf-8")
    failed = [c for c in result.cells if c.error]
    if result.best is None:
        print("no grid cell completed", file=sys.stderr)
        return 1
    best = result.best
    print(
        f"best {args.objective}={best.metrics[args.objective]:.4f} "
        f"at M={best.feedback_docs} T={best.expansion_terms} "
        f"({len(result.cells)} cells, {len(failed)} failed) -> {args.out}"
    )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    if args.terms:
        qid, config_id = args.terms
        print(emit_terms(report, qid, config_id), end="")
    elif args.per_query:
        print(emit_per_query(report), end="")
    else:
        print(emit_table(report), end="")
    return 0


def _parse_index_binding(value: str) -> tuple[str, str]:
    genre, sep, path = value.partition("=")
    if not sep or not genre or not path:
        raise argparse.ArgumentTypeError(f"bad index binding {value!r} (want genre=dir)")
    return genre, path


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import create_app

    app = create_app(
        index_dirs=dict(args.index),
        topics_path=args.topics,
        qrels_path=args.qrels,
        corpus_path=args.corpus,
        ui_dir=args.ui,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chronosearch")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build an inverted index from a JSONL corpus")
    p_index.add_argument("--corpus", required=True)
    p_index.add_argument("--genre", required=True, choices=sorted(_GENRES))
    p_index.add_argument("--unit", required=True, choices=sorted(_UNITS))
    p_index.add_argument("--out", required=True)
    p_index.add_argument("--stopwords", help="file with one stopword per line")
    p_index.set_defaults(func=cmd_index)

    p_judge = sub.add_parser("judge", help="pool, machine-grade, and verify judgments")
    p_judge.add_argument("--topics", required=True)
    p_judge.add_argument("--index", required=True)
    p_judge.add_argument("--corpus", required=True)
    p_judge.add_argument("--out", required=True)
    p_judge.add_argument("--cache", required=True, help="transcript cache directory")
    p_judge.add_argument("--replay-only", action="store_true")
    p_judge.add_argument("--k", type=int, default=POOL_DEPTH, help="pooling depth")
    p_judge.add_argument("--fraction", type=float, default=VERIFICATION_FRACTION)
    p_judge.add_argument("--seed", type=int, default=0)
    p_judge.add_argument("--expert-qrels", help="expert grades for the sampled subset")
    p_judge.add_argument("--instructions", help="override the grading instruction file")
    p_judge.add_argument("--workers", type=int, default=1)
    p_judge.set_defaults(func=cmd_judge)

    p_run = sub.add_parser("run", help="run the benchmark configurations from a TOML file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", help="override [paths].out_dir")
    p_run.add_argument("--timestamp", action="store_true", help="embed a wall-clock timestamp")
    p_run.set_defaults(func=cmd_run)

    p_grid = sub.add_parser("grid", help="sweep feedback parameters for one experiment")
    p_grid.add_argument("--config", required=True)
    p_grid.add_argument("--experiment", required=True, choices=[c for c in CONFIG_IDS if POLICIES[c]])
    p_grid.add_argument("--out", required=True, help="surface CSV path")
    p_grid.add_argument("--objective", default="MAP")
    p_grid.add_argument("--docs", help="M grid, start:stop:step or comma list")
    p_grid.add_argument("--terms", help="T grid, start:stop:step or comma list")
    p_grid.add_argument("--workers", type=int, default=1)
    p_grid.set_defaults(func=cmd_grid)

    p_report = sub.add_parser("report", help="render tables from a saved benchmark report")
    p_report.add_argument("--report", required=True, help="benchmark_report.json path")
    p_report.add_argument("--per-query", action="store_true", help="per-query AP CSV")
    p_report.add_argument(
        "--terms", nargs=2, metavar=("QID", "CONFIG"), help="expansion terms for one query"
    )
    p_report.set_defaults(func=cmd_report)

    p_serve = sub.add_parser("serve", help="serve the read-only HTTP API")
    p_serve.add_argument(
        "--index",
        action="append",
        required=True,
        type=_parse_index_binding,
        metavar="GENRE=DIR",
    )
    p_serve.add_argument("--topics")
    p_serve.add_argument("--qrels")
    p_serve.add_argument("--corpus", help="corpus JSONL for result snippets")
    p_serve.add_argument("--ui", help="directory with a built explorer page to mount at /")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8100)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
