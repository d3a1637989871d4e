"""Graded-relevance evaluation: qrels/run parsing, ranking metrics,
paired significance testing, and the feedback parameter grid.

Binary metrics (AP, Recall, P@10, RR) treat grade >= 1 as relevant;
nDCG consumes the full 0-4 grades with linear gain by default (an
exponential-gain variant sits behind a flag). Queries without any
relevant passage are excluded from aggregate means and reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from scipy import stats as _scipy_stats

from .retrieval import ScoredHit

GRADE_MIN, GRADE_MAX = 0, 4
DEFAULT_DEPTH = 1000
DEFAULT_BINARIZE_AT = 1

AGGREGATE_METRICS = ("MAP", "Recall", "nDCG", "P@10", "MRR")
PER_QUERY_METRICS = ("AP", "Recall", "nDCG", "P@10", "RR")
AGGREGATE_TO_PER_QUERY = dict(zip(AGGREGATE_METRICS, PER_QUERY_METRICS))

DEFAULT_FEEDBACK_DOC_GRID = tuple(range(10, 101, 10))
DEFAULT_EXPANSION_TERM_GRID = tuple(range(20, 121, 10))


@dataclass
class QrelSet:
    """Graded judgments keyed by qid then passage_id; grades in 0-4."""

    grades: dict[str, dict[str, int]] = field(default_factory=dict)

    def add(self, qid: str, passage_id: str, grade: int) -> None:
        if not GRADE_MIN <= grade <= GRADE_MAX or grade != int(grade):
            raise ValueError(f"grade {grade} outside {GRADE_MIN}-{GRADE_MAX}")
        per_query = self.grades.setdefault(qid, {})
        if passage_id in per_query:
            raise ValueError(f"duplicate judgment for ({qid}, {passage_id})")
        per_query[passage_id] = int(grade)

    def qids(self) -> list[str]:
        return sorted(self.grades)

    def relevant_count(self, qid: str, binarize_at: int = DEFAULT_BINARIZE_AT) -> int:
        return sum(1 for g in self.grades.get(qid, {}).values() if g >= binarize_at)


@dataclass
class RunFile:
    hits: dict[str, list[ScoredHit]]
    run_tag: str

    def qids(self) -> list[str]:
        return sorted(self.hits)


def load_qrels(path: str | Path) -> QrelSet:
    """Parse TREC qrels (``qid 0 passage_id grade``); violations name the line."""
    qrels = QrelSet()
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{line_no}: expected 4 fields, got {len(parts)}")
            qid, _, passage_id, grade_raw = parts
            try:
                grade = int(grade_raw)
            except ValueError:
                raise ValueError(f"{path}:{line_no}: grade {grade_raw!r} is not an integer") from None
            try:
                qrels.add(qid, passage_id, grade)
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
    return qrels


def write_qrels(path: str | Path, qrels: QrelSet) -> None:
    lines = []
    for qid in qrels.qids():
        for passage_id in sorted(qrels.grades[qid]):
            lines.append(f"{qid} 0 {passage_id} {qrels.grades[qid][passage_id]}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_run(path: str | Path) -> RunFile:
    """Parse a TREC run file, enforcing consecutive ranks and unique ids."""
    path = Path(path)
    hits: dict[str, list[ScoredHit]] = {}
    seen: dict[str, set[str]] = {}
    run_tag = "unknown"
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}:{line_no}: expected 6 fields, got {len(parts)}")
            qid, _, passage_id, rank_raw, score_raw, run_tag = parts
            try:
                rank = int(rank_raw)
                score = float(score_raw)
            except ValueError:
                raise ValueError(f"{path}:{line_no}: unparseable rank or score") from None
            per_query = hits.setdefault(qid, [])
            if rank != len(per_query) + 1:
                raise ValueError(
                    f"{path}:{line_no}: rank {rank} not consecutive (expected {len(per_query) + 1})"
                )
            if passage_id in seen.setdefault(qid, set()):
                raise ValueError(f"{path}:{line_no}: duplicate passage {passage_id} for {qid}")
            seen[qid].add(passage_id)
            per_query.append(ScoredHit(passage_id, score, rank))
    return RunFile(hits=hits, run_tag=run_tag)


# ---------------------------------------------------------------------------
# Per-query metrics. Each takes the ranked passage ids and that query's
# grade map, and returns None when the query has no relevant passage.


def average_precision(
    ranking: Sequence[str],
    grades: Mapping[str, int],
    binarize_at: int = DEFAULT_BINARIZE_AT,
    depth: int = DEFAULT_DEPTH,
) -> Optional[float]:
    total_relevant = sum(1 for g in grades.values() if g >= binarize_at)
    if total_relevant == 0:
        return None
    hits = 0
    precision_sum = 0.0
    for position, passage_id in enumerate(ranking[:depth], start=1):
        if grades.get(passage_id, 0) >= binarize_at:
            hits += 1
            precision_sum += hits / position
    return precision_sum / total_relevant


def ndcg(
    ranking: Sequence[str],
    grades: Mapping[str, int],
    depth: int = DEFAULT_DEPTH,
    exponential_gain: bool = False,
) -> Optional[float]:
    def gain(grade: int) -> float:
        return float(2**grade - 1) if exponential_gain else float(grade)

    ideal = sorted((g for g in grades.values() if g > 0), reverse=True)
    idcg = sum(gain(g) / math.log2(pos + 1) for pos, g in enumerate(ideal[:depth], start=1))
    if idcg == 0.0:
        return None
    dcg = sum(
        gain(grades.get(pid, 0)) / math.log2(pos + 1)
        for pos, pid in enumerate(ranking[:depth], start=1)
    )
    return dcg / idcg


def precision_at(
    ranking: Sequence[str],
    grades: Mapping[str, int],
    cutoff: int = 10,
    binarize_at: int = DEFAULT_BINARIZE_AT,
) -> float:
    # Divides by the cutoff even when fewer passages were returned.
    relevant = sum(1 for pid in ranking[:cutoff] if grades.get(pid, 0) >= binarize_at)
    return relevant / cutoff


def reciprocal_rank(
    ranking: Sequence[str],
    grades: Mapping[str, int],
    binarize_at: int = DEFAULT_BINARIZE_AT,
) -> float:
    for position, passage_id in enumerate(ranking, start=1):
        if grades.get(passage_id, 0) >= binarize_at:
            return 1.0 / position
    return 0.0


def recall_at(
    ranking: Sequence[str],
    grades: Mapping[str, int],
    depth: int = DEFAULT_DEPTH,
    binarize_at: int = DEFAULT_BINARIZE_AT,
) -> Optional[float]:
    total_relevant = sum(1 for g in grades.values() if g >= binarize_at)
    if total_relevant == 0:
        return None
    retrieved = sum(1 for pid in ranking[:depth] if grades.get(pid, 0) >= binarize_at)
    return retrieved / total_relevant


@dataclass
class EvalReport:
    run_tag: str
    depth: int
    per_query: dict[str, dict[str, float]]
    aggregates: dict[str, float]
    evaluated_qids: list[str]
    excluded_qids: list[str]  # no relevant passage in qrels
    missing_qids: list[str]  # relevant passages exist but run has no hits
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "run_tag": self.run_tag,
            "depth": self.depth,
            "aggregates": self.aggregates,
            "per_query": {qid: self.per_query[qid] for qid in sorted(self.per_query)},
            "evaluated_qids": self.evaluated_qids,
            "excluded_qids": self.excluded_qids,
            "missing_qids": self.missing_qids,
            "params": self.params,
        }


def evaluate_run(
    run: RunFile,
    qrels: QrelSet,
    depth: int = DEFAULT_DEPTH,
    binarize_at: int = DEFAULT_BINARIZE_AT,
    exponential_gain: bool = False,
) -> EvalReport:
    """Score a run against graded judgments.

    Every qrels query with at least one relevant passage is evaluated;
    a query the run never answered scores zero on all metrics and is
    listed as missing. Aggregates are arithmetic means over evaluated
    queries.
    """
    shared = set(run.hits) & set(qrels.grades)
    if not shared:
        raise ValueError("run and qrels have no qids in common")

    per_query: dict[str, dict[str, float]] = {}
    excluded: list[str] = []
    missing: list[str] = []
    for qid in qrels.qids():
        grades = qrels.grades[qid]
        if qrels.relevant_count(qid, binarize_at) == 0:
            excluded.append(qid)
            continue
        ranking = [hit.passage_id for hit in run.hits.get(qid, [])]
        if not ranking:
            missing.append(qid)
        ap = average_precision(ranking, grades, binarize_at, depth)
        ndcg_value = ndcg(ranking, grades, depth, exponential_gain)
        per_query[qid] = {
            "AP": ap if ap is not None else 0.0,
            "Recall": recall_at(ranking, grades, depth, binarize_at) or 0.0,
            "nDCG": ndcg_value if ndcg_value is not None else 0.0,
            "P@10": precision_at(ranking, grades, 10, binarize_at),
            "RR": reciprocal_rank(ranking, grades, binarize_at),
        }

    evaluated = sorted(per_query)
    if not evaluated:
        raise ValueError("no evaluable queries (none has a relevant passage)")
    aggregates = {
        agg: sum(per_query[qid][pq] for qid in evaluated) / len(evaluated)
        for agg, pq in AGGREGATE_TO_PER_QUERY.items()
    }
    return EvalReport(
        run_tag=run.run_tag,
        depth=depth,
        per_query=per_query,
        aggregates=aggregates,
        evaluated_qids=evaluated,
        excluded_qids=excluded,
        missing_qids=missing,
        params={"binarize_at": binarize_at, "exponential_gain": exponential_gain},
    )


@dataclass
class SignificanceResult:
    system_tag: str
    baseline_tag: str
    metric: str
    t_statistic: float
    p_value: float
    significant: bool
    n: int
    note: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "system": self.system_tag,
            "baseline": self.baseline_tag,
            "metric": self.metric,
            "t": self.t_statistic,
            "p": self.p_value,
            "significant": self.significant,
            "n": self.n,
            "note": self.note,
        }


def paired_t_test(
    per_query_a: Sequence[float],
    per_query_b: Sequence[float],
    system_tag: str = "a",
    baseline_tag: str = "b",
    metric: str = "",
    significance_level: float = 0.05,
) -> SignificanceResult:
    """Two-sided paired t-test on per-query metric values.

    d_i = a_i - b_i, t = mean(d) / (sd(d)/sqrt(n)) with df = n-1.
    All-zero differences give p = 1.0 (flagged "identical"); zero
    variance with a nonzero mean is treated as p -> 0 (flagged
    "degenerate variance").
    """
    if len(per_query_a) != len(per_query_b):
        raise ValueError("paired t-test needs equal-length value lists")
    n = len(per_query_a)
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    diffs = [a - b for a, b in zip(per_query_a, per_query_b)]
    mean_d = sum(diffs) / n
    variance = sum((d - mean_d) ** 2 for d in diffs) / (n - 1)
    sd = math.sqrt(variance)

    if all(d == 0.0 for d in diffs):
        return SignificanceResult(system_tag, baseline_tag, metric, 0.0, 1.0, False, n, "identical")
    if sd == 0.0:
        t_stat = math.inf if mean_d > 0 else -math.inf
        return SignificanceResult(
            system_tag, baseline_tag, metric, t_stat, 0.0, True, n, "degenerate variance"
        )
    t_stat = mean_d / (sd / math.sqrt(n))
    p_value = 2.0 * float(_scipy_stats.t.sf(abs(t_stat), df=n - 1))
    return SignificanceResult(
        system_tag,
        baseline_tag,
        metric,
        t_stat,
        p_value,
        p_value < significance_level,
        n,
    )


@dataclass
class GridCell:
    feedback_docs: int
    expansion_terms: int
    metrics: Optional[dict[str, float]] = None
    error: Optional[str] = None


@dataclass
class GridSearchResult:
    objective: str
    cells: list[GridCell]
    best: Optional[GridCell]

    def to_csv(self) -> str:
        lines = ["M,T,metric,value"]
        for cell in self.cells:
            if cell.metrics is None:
                continue
            for metric in AGGREGATE_METRICS:
                lines.append(
                    f"{cell.feedback_docs},{cell.expansion_terms},{metric},{cell.metrics[metric]:.6f}"
                )
        return "\n".join(lines) + "\n"


def grid_search(
    run_cell: Callable[[int, int], Mapping[str, float]],
    docs_grid: Iterable[int] = DEFAULT_FEEDBACK_DOC_GRID,
    terms_grid: Iterable[int] = DEFAULT_EXPANSION_TERM_GRID,
    objective: str = "MAP",
) -> GridSearchResult:
    """Evaluate every (feedback_docs, expansion_terms) cell.

    ``run_cell`` returns the aggregate metrics for one cell; a failing
    cell is recorded and skipped, never fatal. Ties on the objective go
    to the smaller feedback_docs, then the smaller expansion_terms --
    guaranteed by scanning cells in ascending order with a strict
    improvement test.
    """
    if objective not in AGGREGATE_METRICS:
        raise ValueError(f"unknown objective {objective!r}")
    cells: list[GridCell] = []
    best: Optional[GridCell] = None
    for docs in sorted(set(docs_grid)):
        for terms in sorted(set(terms_grid)):
            cell = GridCell(docs, terms)
            try:
                cell.metrics = dict(run_cell(docs, terms))
            except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
                cell.error = f"{type(exc).__name__}: {exc}"
            cells.append(cell)
            if cell.metrics is not None and (
                best is None or cell.metrics[objective] > best.metrics[objective]
            ):
                best = cell
    return GridSearchResult(objective=objective, cells=cells, best=best)
