"""Experiment orchestration: run the four retrieval configurations,
evaluate them against shared qrels, test significance against the two
baselines, and render the report tables.

Everything here is deterministic by construction; the report carries
index hashes and parameter echoes so a rerun can be checked byte for
byte (wall-clock timestamps are opt-in for that reason).
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

from . import __version__
from .evalkit import (
    AGGREGATE_METRICS,
    AGGREGATE_TO_PER_QUERY,
    DEFAULT_DEPTH,
    DEFAULT_EXPANSION_TERM_GRID,
    DEFAULT_FEEDBACK_DOC_GRID,
    EvalReport,
    GridSearchResult,
    QrelSet,
    RunFile,
    evaluate_run,
    grid_search,
    load_qrels,
    paired_t_test,
)
from .feedback import (
    CONFIG_IDS,
    POLICIES,
    ExpansionResult,
    FeedbackParams,
    TransferPolicy,
    expand_query,
)
from .invindex import INDEX_FILES, Index, load
from .judging import TopicSpec, load_topics
from .retrieval import (
    BM25Params,
    Query,
    ScoredHit,
    analyze_query,
    search,
    search_weighted,
    write_run,
)

logger = logging.getLogger(__name__)

BASELINE_IDS = ("NonFiction_base", "NonFiction_RLM")
BASELINE_MARKS = {"NonFiction_base": "*", "NonFiction_RLM": "†"}
BASE_RETRIEVAL_GENRE = "nonfiction"

REPORT_FILENAME = "benchmark_report.json"
TABLE_FILENAME = "table.txt"
PER_QUERY_FILENAME = "per_query_ap.csv"


@dataclass
class ExperimentConfig:
    """One Table-1 row: a configuration id plus everything needed to run it."""

    config_id: str
    index_dirs: Dict[str, Path]
    feedback: Optional[FeedbackParams]
    bm25: BM25Params
    depth: int
    qrels_path: Path
    topics_path: Path

    def __post_init__(self) -> None:
        if self.config_id not in CONFIG_IDS:
            raise ValueError(f"unknown configuration {self.config_id!r}")
        policy = POLICIES[self.config_id]
        if policy is None and self.feedback is not None:
            raise ValueError(f"{self.config_id} takes no feedback parameters")
        if policy is not None and self.feedback is None:
            raise ValueError(f"{self.config_id} needs feedback parameters")
        for role in self.required_genres():
            if role not in self.index_dirs:
                raise ValueError(f"{self.config_id} needs an index for {role!r}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def policy(self) -> Optional[TransferPolicy]:
        return POLICIES[self.config_id]

    def required_genres(self) -> List[str]:
        policy = POLICIES[self.config_id]
        if policy is None:
            return [BASE_RETRIEVAL_GENRE]
        return sorted({policy.feedback_source, policy.target_vocab, policy.retrieval_target})


@dataclass
class ConfigOutcome:
    config_id: str
    run_tag: str
    eval_report: Optional[EvalReport] = None
    expansions: Dict[str, ExpansionResult] = field(default_factory=dict)
    unanswerable_qids: List[str] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> dict:
        fallbacks = {
            qid: result.fallback_reason
            for qid, result in sorted(self.expansions.items())
            if result.fallback
        }
        expansions = {
            qid: {
                "fallback": result.fallback,
                "fallback_reason": result.fallback_reason,
                "terms": [
                    {"term": t.term, "weight": t.weight, "kept": t.kept} for t in result.terms
                ],
            }
            for qid, result in sorted(self.expansions.items())
        }
        return {
            "config_id": self.config_id,
            "run_tag": self.run_tag,
            "error": self.error,
            "unanswerable_qids": self.unanswerable_qids,
            "fallbacks": fallbacks,
            "expansions": expansions,
            "eval": self.eval_report.to_dict() if self.eval_report else None,
        }


@dataclass
class BenchmarkReport:
    outcomes: Dict[str, ConfigOutcome]
    significance: Dict[str, Dict[str, dict]]
    provenance: dict

    def to_dict(self) -> dict:
        return {
            "outcomes": {cid: out.to_dict() for cid, out in sorted(self.outcomes.items())},
            "significance": self.significance,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def hash_index_dir(path: str | Path) -> str:
    """Stable content hash over the three index files.

    A directory that cannot be read hashes to an ``unavailable`` marker
    so provenance never aborts a benchmark whose configs already failed
    individually.
    """
    digest = hashlib.sha256()
    path = Path(path)
    try:
        for name in INDEX_FILES:
            digest.update(name.encode("utf-8"))
            digest.update((path / name).read_bytes())
    except OSError as exc:
        return f"unavailable ({exc.strerror or exc})"
    return digest.hexdigest()


class _IndexCache:
    """Loads each index directory once per benchmark run."""

    def __init__(self, index_dirs: Mapping[str, Path]) -> None:
        self.index_dirs = dict(index_dirs)
        self._loaded: Dict[Path, Index] = {}

    def get(self, genre: str) -> Index:
        path = Path(self.index_dirs[genre])
        if path not in self._loaded:
            self._loaded[path] = load(path)
        return self._loaded[path]


def _check_analysis_compatible(indexes: Mapping[str, Index], config_id: str) -> None:
    metas = list(indexes.values())
    for other in metas[1:]:
        if not metas[0].meta.analysis_compatible(other.meta):
            raise ValueError(f"{config_id}: indexes were built with different analysis settings")


def _retrieve_for_config(
    config: ExperimentConfig,
    topics: Sequence[TopicSpec],
    cache: _IndexCache,
) -> tuple[ConfigOutcome, Dict[str, List[ScoredHit]]]:
    outcome = ConfigOutcome(config_id=config.config_id, run_tag=config.config_id)
    policy = config.policy
    indexes = {genre: cache.get(genre) for genre in config.required_genres()}
    _check_analysis_compatible(indexes, config.config_id)
    target_genre = policy.retrieval_target if policy else BASE_RETRIEVAL_GENRE
    target = indexes[target_genre]
    cfg = target.meta.normalization

    hits_by_qid: Dict[str, List[ScoredHit]] = {}
    for topic in topics:
        query = analyze_query(topic.qid, topic.query, cfg)
        if query.unanswerable:
            logger.warning("%s: query %s has no index terms", config.config_id, topic.qid)
            outcome.unanswerable_qids.append(topic.qid)
            hits_by_qid[topic.qid] = []
            continue
        if policy is None:
            hits_by_qid[topic.qid] = search(target, query, config.depth, config.bm25)
        else:
            assert config.feedback is not None
            expansion = expand_query(query, policy, config.feedback, indexes, config.bm25)
            outcome.expansions[topic.qid] = expansion
            hits_by_qid[topic.qid] = search_weighted(
                target, expansion.weighted_query, config.depth, config.bm25
            )
    return outcome, hits_by_qid


def run_benchmark(
    configs: Sequence[ExperimentConfig],
    out_dir: str | Path,
    include_timestamps: bool = False,
) -> BenchmarkReport:
    """Run every configuration, write run files, evaluate, and compare.

    Configs fail independently: an error in one is recorded in its
    outcome while the others still complete. Significance is computed
    per metric column against both baselines, only when two configs
    evaluated the identical qid set.
    """
    if not configs:
        raise ValueError("no configurations to run")
    ids = [c.config_id for c in configs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate configuration ids")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # Topics, qrels, and index paths are shared across configs.
    first = configs[0]
    topics = load_topics(first.topics_path)
    qrels = load_qrels(first.qrels_path)
    index_dirs: Dict[str, Path] = {}
    for config in configs:
        index_dirs.update(config.index_dirs)
    cache = _IndexCache(index_dirs)

    outcomes: Dict[str, ConfigOutcome] = {}
    for config in configs:
        try:
            outcome, hits_by_qid = _retrieve_for_config(config, topics, cache)
            run_path = out_dir / f"{config.config_id}.run"
            write_run(run_path, hits_by_qid, config.config_id)
            if outcome.expansions:
                _write_expansion_tsv(
                    out_dir / f"{config.config_id}_expansion.tsv",
                    outcome.expansions,
                    config.policy.feedback_source if config.policy else "",
                )
            run = RunFile(hits=hits_by_qid, run_tag=config.config_id)
            outcome.eval_report = evaluate_run(run, qrels, depth=config.depth)
        except Exception as exc:  # noqa: BLE001 - per-config isolation is the contract
            logger.error("configuration %s failed: %s", config.config_id, exc)
            outcome = ConfigOutcome(config_id=config.config_id, run_tag=config.config_id)
            outcome.error = f"{type(exc).__name__}: {exc}"
        outcomes[config.config_id] = outcome

    significance = _significance_matrix(outcomes)
    provenance = {
        "tool_version": __version__,
        "index_hashes": {
            genre: hash_index_dir(path) for genre, path in sorted(index_dirs.items())
        },
        "configs": {
            c.config_id: {
                "bm25": {"k1": c.bm25.k1, "b": c.bm25.b},
                "feedback": c.feedback.to_dict() if c.feedback else None,
                "depth": c.depth,
            }
            for c in configs
        },
    }
    if include_timestamps:
        import datetime

        provenance["generated_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()

    report = BenchmarkReport(outcomes=outcomes, significance=significance, provenance=provenance)
    (out_dir / REPORT_FILENAME).write_text(report.to_json(), encoding="utf-8")
    (out_dir / TABLE_FILENAME).write_text(emit_table(report.to_dict()), encoding="utf-8")
    (out_dir / PER_QUERY_FILENAME).write_text(emit_per_query(report.to_dict()), encoding="utf-8")
    return report


def _write_expansion_tsv(
    path: Path, expansions: Mapping[str, ExpansionResult], source_genre: str
) -> None:
    lines = ["qid\tterm\tweight\tsource_genre\tstatus"]
    for qid in sorted(expansions):
        for record in expansions[qid].terms:
            status = "kept" if record.kept else "filtered"
            lines.append(f"{qid}\t{record.term}\t{record.weight:.6f}\t{source_genre}\t{status}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _significance_matrix(outcomes: Mapping[str, ConfigOutcome]) -> Dict[str, Dict[str, dict]]:
    matrix: Dict[str, Dict[str, dict]] = {}
    for config_id, outcome in outcomes.items():
        if outcome.eval_report is None:
            continue
        for baseline_id in BASELINE_IDS:
            if baseline_id == config_id:
                continue
            baseline = outcomes.get(baseline_id)
            if baseline is None or baseline.eval_report is None:
                continue
            sys_eval, base_eval = outcome.eval_report, baseline.eval_report
            if set(sys_eval.evaluated_qids) != set(base_eval.evaluated_qids):
                matrix.setdefault(config_id, {})[baseline_id] = {
                    "skipped": "configurations evaluated different qid sets"
                }
                continue
            qids = sys_eval.evaluated_qids
            per_metric = {}
            for aggregate, per_query_key in AGGREGATE_TO_PER_QUERY.items():
                result = paired_t_test(
                    [sys_eval.per_query[q][per_query_key] for q in qids],
                    [base_eval.per_query[q][per_query_key] for q in qids],
                    system_tag=config_id,
                    baseline_tag=baseline_id,
                    metric=aggregate,
                )
                per_metric[aggregate] = result.to_dict()
            matrix.setdefault(config_id, {})[baseline_id] = per_metric
    return matrix


def _superscripts(report: Mapping, config_id: str, metric: str) -> str:
    marks = ""
    per_baseline = report.get("significance", {}).get(config_id, {})
    for baseline_id in BASELINE_IDS:
        cell = per_baseline.get(baseline_id)
        if cell and metric in cell and cell[metric].get("significant"):
            marks += BASELINE_MARKS[baseline_id]
    return marks


def emit_table(report: Mapping) -> str:
    """Render the configs-by-metrics matrix, 4 decimals per cell.

    A trailing ``*`` marks p < 0.05 against NonFiction_base, ``†``
    against NonFiction_RLM, per metric column.
    """
    outcomes = report["outcomes"]
    rows = [cid for cid in CONFIG_IDS if cid in outcomes]
    rows += [cid for cid in sorted(outcomes) if cid not in CONFIG_IDS]
    name_width = max([len("Configuration")] + [len(cid) for cid in rows]) + 2
    header = "Configuration".ljust(name_width) + "".join(
        metric.rjust(11) for metric in AGGREGATE_METRICS
    )
    lines = [header]
    for config_id in rows:
        outcome = outcomes[config_id]
        line = config_id.ljust(name_width)
        if outcome.get("eval") is None:
            reason = outcome.get("error") or "no evaluation"
            lines.append(line + f"  failed ({reason})")
            continue
        aggregates = outcome["eval"]["aggregates"]
        for metric in AGGREGATE_METRICS:
            cell = f"{aggregates[metric]:.4f}{_superscripts(report, config_id, metric)}"
            line += cell.rjust(11)
        lines.append(line)
    legend = (
        "* p < 0.05 vs NonFiction_base; † p < 0.05 vs NonFiction_RLM "
        "(paired two-sided t-test on per-query values)"
    )
    return "\n".join(lines + ["", legend]) + "\n"


def emit_per_query(report: Mapping) -> str:
    """Per-query average precision for every configuration, as CSV."""
    lines = ["qid,config,ap"]
    outcomes = report["outcomes"]
    order = [cid for cid in CONFIG_IDS if cid in outcomes]
    order += [cid for cid in sorted(outcomes) if cid not in CONFIG_IDS]
    qids: List[str] = sorted(
        {
            qid
            for outcome in outcomes.values()
            if outcome.get("eval")
            for qid in outcome["eval"]["per_query"]
        }
    )
    for qid in qids:
        for config_id in order:
            outcome = outcomes[config_id]
            if not outcome.get("eval"):
                continue
            per_query = outcome["eval"]["per_query"]
            if qid in per_query:
                lines.append(f"{qid},{config_id},{per_query[qid]['AP']:.6f}")
    return "\n".join(lines) + "\n"


_TERM_COUNTERPART = {
    "Fiction_RLM": "NonFiction_RLM",
    "NonFiction_RLM": "Fiction_RLM",
    "FictionNonFiction_RLM": "NonFiction_RLM",
}


def emit_terms(report: Mapping, qid: str, config_id: str) -> str:
    """Expansion terms for one query, weights descending.

    Terms that also survive in the counterpart configuration's
    expansion for the same query are bold-marked (``**term**``), the
    way shared terms are flagged in cross-genre comparisons.
    """
    outcomes = report["outcomes"]
    if config_id not in outcomes:
        raise KeyError(f"no configuration {config_id!r} in report")
    expansions = outcomes[config_id].get("expansions", {})
    if qid not in expansions:
        raise KeyError(f"no expansion for query {qid!r} under {config_id}")
    counterpart_kept: set[str] = set()
    counterpart_id = _TERM_COUNTERPART.get(config_id)
    if counterpart_id and counterpart_id in outcomes:
        other = outcomes[counterpart_id].get("expansions", {}).get(qid)
        if other:
            counterpart_kept = {t["term"] for t in other["terms"] if t["kept"]}
    lines = [f"# {qid} / {config_id}", "rank\tterm\tweight\tstatus"]
    for rank, record in enumerate(expansions[qid]["terms"], start=1):
        term = record["term"]
        shown = f"**{term}**" if term in counterpart_kept else term
        status = "kept" if record["kept"] else "filtered"
        lines.append(f"{rank}\t{shown}\t{record['weight']:.3f}\t{status}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parameter grid over one configuration.


def run_grid(
    config_id: str,
    index_dirs: Mapping[str, Path],
    topics_path: str | Path,
    qrels_path: str | Path,
    alpha: float = 0.5,
    mu: float = 1000.0,
    bm25: Optional[BM25Params] = None,
    depth: int = DEFAULT_DEPTH,
    docs_grid: Sequence[int] = DEFAULT_FEEDBACK_DOC_GRID,
    terms_grid: Sequence[int] = DEFAULT_EXPANSION_TERM_GRID,
    objective: str = "MAP",
    workers: int = 1,
) -> GridSearchResult:
    """Sweep (feedback_docs, expansion_terms) for one RLM configuration."""
    policy = POLICIES.get(config_id)
    if policy is None:
        raise ValueError(f"{config_id!r} has no feedback parameters to sweep")
    bm25 = bm25 or BM25Params()
    topics = load_topics(topics_path)
    qrels = load_qrels(qrels_path)
    cache = _IndexCache(index_dirs)
    indexes = {
        genre: cache.get(genre)
        for genre in {policy.feedback_source, policy.target_vocab, policy.retrieval_target}
    }
    _check_analysis_compatible(indexes, config_id)
    target = indexes[policy.retrieval_target]
    cfg = target.meta.normalization
    queries = [analyze_query(t.qid, t.query, cfg) for t in topics]

    def run_cell(docs: int, terms: int) -> Dict[str, float]:
        params = FeedbackParams(
            feedback_docs=docs, expansion_terms=terms, alpha=alpha, mu=mu
        )
        hits_by_qid: Dict[str, List[ScoredHit]] = {}
        for query in queries:
            if query.unanswerable:
                hits_by_qid[query.qid] = []
                continue
            expansion = expand_query(query, policy, params, indexes, bm25)
            hits_by_qid[query.qid] = search_weighted(
                target, expansion.weighted_query, depth, bm25
            )
        run = RunFile(hits=hits_by_qid, run_tag=f"{config_id}_M{docs}_T{terms}")
        return evaluate_run(run, qrels, depth=depth).aggregates

    if workers > 1:
        cells = [(d, t) for d in sorted(set(docs_grid)) for t in sorted(set(terms_grid))]
        with ThreadPoolExecutor(max_workers=workers) as executor:
            computed = dict(zip(cells, executor.map(lambda c: _safe_cell(run_cell, c), cells)))

        def lookup(docs: int, terms: int) -> Dict[str, float]:
            outcome = computed[(docs, terms)]
            if isinstance(outcome, Exception):
                raise outcome
            return outcome

        return grid_search(lookup, docs_grid, terms_grid, objective)
    return grid_search(run_cell, docs_grid, terms_grid, objective)


def _safe_cell(run_cell, cell: tuple[int, int]):
    try:
        return run_cell(*cell)
    except Exception as exc:  # noqa: BLE001 - grid cells fail independently
        return exc


# ---------------------------------------------------------------------------
# TOML experiment configs. Python 3.11 ships tomllib; on 3.10 a small
# reader covering the subset these files use (tables, strings, numbers,
# booleans, flat arrays) keeps the dependency surface flat.


def _strip_comment(line: str) -> str:
    out = []
    in_string = False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


def _parse_toml_subset(text: str, source: str = "<config>") -> dict:
    root: dict = {}
    current = root
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = root
            for part in line[1:-1].strip().split("."):
                part = part.strip().strip('"')
                if not part:
                    raise ValueError(f"{source}:{line_no}: empty table name component")
                current = current.setdefault(part, {})
                if not isinstance(current, dict):
                    raise ValueError(f"{source}:{line_no}: {part!r} is not a table")
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{line_no}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip().strip('"')
        value = value.strip()
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            raise ValueError(f"{source}:{line_no}: unsupported value {value!r}") from None
        current[key] = parsed
    return root


def load_toml(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        import tomllib  # Python 3.11+

        return tomllib.loads(text)
    except ModuleNotFoundError:
        return _parse_toml_subset(text, str(path))


def load_experiment_file(path: str | Path) -> tuple[List[ExperimentConfig], dict]:
    """Build ExperimentConfigs from a TOML file with per-experiment sections.

    Layout: ``[paths]`` (topics, qrels, out_dir), ``[indexes]`` (genre
    label to index dir), ``[defaults]`` (depth, k1, b, and feedback
    parameter defaults), and one ``[experiment.<config_id>]`` per run,
    whose keys override the defaults. Relative paths resolve against
    the config file's directory.
    """
    path = Path(path)
    data = load_toml(path)
    base = path.parent

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    for section in ("paths", "indexes", "experiment"):
        if section not in data:
            raise ValueError(f"{path}: missing [{section}] section")
    paths = data["paths"]
    for key in ("topics", "qrels", "out_dir"):
        if key not in paths:
            raise ValueError(f"{path}: [paths] needs {key!r}")
    index_dirs = {genre: resolve(p) for genre, p in data["indexes"].items()}
    defaults = data.get("defaults", {})
    depth = int(defaults.get("depth", DEFAULT_DEPTH))
    bm25 = BM25Params(k1=float(defaults.get("k1", 1.2)), b=float(defaults.get("b", 0.75)))

    configs: List[ExperimentConfig] = []
    for config_id, section in data["experiment"].items():
        if not isinstance(section, dict):
            raise ValueError(f"{path}: [experiment.{config_id}] is not a table")
        if not section.get("enabled", True):
            continue
        merged = {**defaults, **section}
        feedback = None
        if POLICIES.get(config_id) is not None:
            feedback = FeedbackParams(
                feedback_docs=int(merged.get("feedback_docs", 10)),
                expansion_terms=int(merged.get("expansion_terms", 20)),
                alpha=float(merged.get("alpha", 0.5)),
                mu=float(merged.get("mu", 1000.0)),
            )
        configs.append(
            ExperimentConfig(
                config_id=config_id,
                index_dirs=index_dirs,
                feedback=feedback,
                bm25=BM25Params(
                    k1=float(merged.get("k1", bm25.k1)), b=float(merged.get("b", bm25.b))
                ),
                depth=int(merged.get("depth", depth)),
                qrels_path=resolve(paths["qrels"]),
                topics_path=resolve(paths["topics"]),
            )
        )
    if not configs:
        raise ValueError(f"{path}: no enabled experiments")
    meta = {
        "out_dir": resolve(paths["out_dir"]),
        "topics": resolve(paths["topics"]),
        "qrels": resolve(paths["qrels"]),
        "index_dirs": index_dirs,
    }
    return configs, meta
