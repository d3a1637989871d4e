from __future__ import annotations

import json
from pathlib import Path

import pytest

from chronosearch.corpus import NormalizationConfig
from chronosearch.evalkit import AGGREGATE_METRICS, evaluate_run, load_run, load_qrels, RunFile
from chronosearch.feedback import POLICIES, FeedbackParams, expand_query
from chronosearch.harness import (
    BASELINE_IDS,
    PER_QUERY_FILENAME,
    REPORT_FILENAME,
    TABLE_FILENAME,
    BenchmarkReport,
    ExperimentConfig,
    _parse_toml_subset,
    emit_per_query,
    emit_table,
    emit_terms,
    hash_index_dir,
    load_experiment_file,
    run_benchmark,
    run_grid,
)
from chronosearch.retrieval import BM25Params, analyze_query, search_weighted

CFG = NormalizationConfig()
DEPTH = 50
FEEDBACK = dict(feedback_docs=5, expansion_terms=8, alpha=0.5, mu=1000.0)


def make_config(config_id, index_dirs, fixtures_dir, feedback="auto", depth=DEPTH):
    if feedback == "auto":
        feedback = None if POLICIES.get(config_id) is None else FeedbackParams(**FEEDBACK)
    return ExperimentConfig(
        config_id=config_id,
        index_dirs=dict(index_dirs),
        feedback=feedback,
        bm25=BM25Params(),
        depth=depth,
        qrels_path=fixtures_dir / "qrels.txt",
        topics_path=fixtures_dir / "topics.jsonl",
    )


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory, index_dirs, fixtures_dir):
    out_dir = tmp_path_factory.mktemp("bench")
    configs = [make_config(cid, index_dirs, fixtures_dir) for cid in POLICIES]
    report = run_benchmark(configs, out_dir)
    return report, out_dir


class TestTomlSubset:
    def test_tables_and_scalars(self):
        text = """
        # top comment
        [paths]
        topics = "topics.jsonl"  # trailing comment
        depth = 50
        ratio = 0.75
        enabled = false
        tags = ["a", "b"]
        [experiment.Fiction_RLM]
        alpha = 0.4
        """
        data = _parse_toml_subset(text)
        assert data["paths"]["topics"] == "topics.jsonl"
        assert data["paths"]["depth"] == 50
        assert data["paths"]["ratio"] == 0.75
        assert data["paths"]["enabled"] is False
        assert data["paths"]["tags"] == ["a", "b"]
        assert data["experiment"]["Fiction_RLM"]["alpha"] == 0.4

    def test_hash_inside_string_kept(self):
        data = _parse_toml_subset('[s]\nnote = "iss#42"')
        assert data["s"]["note"] == "iss#42"

    def test_missing_equals(self):
        with pytest.raises(ValueError, match=":2: expected key = value"):
            _parse_toml_subset("[s]\njust a line")

    def test_unsupported_value(self):
        with pytest.raises(ValueError, match="unsupported value"):
            _parse_toml_subset("[s]\nwhen = 2026-01-01")

    def test_key_then_table_collision(self):
        with pytest.raises(ValueError, match="is not a table"):
            _parse_toml_subset("[s]\na = 1\n[s.a]\nb = 2")


class TestLoadExperimentFile:
    def write(self, tmp_path, index_dirs, fixtures_dir, body):
        header = "[paths]\n"
        header += f'topics = "{fixtures_dir / "topics.jsonl"}"\n'
        header += f'qrels = "{fixtures_dir / "qrels.txt"}"\n'
        header += 'out_dir = "out"\n'
        header += "[indexes]\n"
        for genre, path in index_dirs.items():
            header += f'{genre} = "{path}"\n'
        path = tmp_path / "experiment.toml"
        path.write_text(header + body)
        return path

    def test_full_file(self, tmp_path, index_dirs, fixtures_dir):
        body = """
[defaults]
depth = 25
feedback_docs = 4
expansion_terms = 6
alpha = 0.5
mu = 500.0

[experiment.NonFiction_base]
[experiment.NonFiction_RLM]
[experiment.Fiction_RLM]
alpha = 0.4
depth = 30
[experiment.FictionNonFiction_RLM]
"""
        path = self.write(tmp_path, index_dirs, fixtures_dir, body)
        configs, meta = load_experiment_file(path)
        by_id = {c.config_id: c for c in configs}
        assert set(by_id) == set(POLICIES)
        assert by_id["NonFiction_base"].feedback is None
        assert by_id["NonFiction_base"].depth == 25
        assert by_id["NonFiction_RLM"].feedback.alpha == 0.5
        assert by_id["NonFiction_RLM"].feedback.mu == 500.0
        assert by_id["Fiction_RLM"].feedback.alpha == 0.4
        assert by_id["Fiction_RLM"].depth == 30
        assert by_id["FictionNonFiction_RLM"].feedback.feedback_docs == 4
        assert meta["out_dir"] == tmp_path / "out"
        assert meta["index_dirs"]["fiction"] == index_dirs["fiction"]

    def test_disabled_section_skipped(self, tmp_path, index_dirs, fixtures_dir):
        body = """
[experiment.NonFiction_base]
[experiment.Fiction_RLM]
enabled = false
"""
        path = self.write(tmp_path, index_dirs, fixtures_dir, body)
        configs, _ = load_experiment_file(path)
        assert [c.config_id for c in configs] == ["NonFiction_base"]

    def test_all_disabled_is_error(self, tmp_path, index_dirs, fixtures_dir):
        body = "[experiment.NonFiction_base]\nenabled = false\n"
        path = self.write(tmp_path, index_dirs, fixtures_dir, body)
        with pytest.raises(ValueError, match="no enabled experiments"):
            load_experiment_file(path)

    @pytest.mark.parametrize("section", ["paths", "indexes", "experiment"])
    def test_missing_section(self, tmp_path, index_dirs, fixtures_dir, section):
        body = "[experiment.NonFiction_base]\n"
        path = self.write(tmp_path, index_dirs, fixtures_dir, body)
        text = path.read_text()
        lines = text.splitlines(keepends=True)
        if section == "paths":
            text = "".join(l for l in lines if "topics" not in l and "qrels" not in l and "out_dir" not in l and l != "[paths]\n")
        elif section == "indexes":
            text = "".join(l for l in lines if not any(g in l for g in index_dirs) and l != "[indexes]\n")
        else:
            text = "".join(l for l in lines if "experiment" not in l)
        path.write_text(text)
        with pytest.raises(ValueError, match=rf"missing \[{section}\] section"):
            load_experiment_file(path)

    def test_missing_paths_key(self, tmp_path, index_dirs, fixtures_dir):
        path = tmp_path / "experiment.toml"
        path.write_text(
            '[paths]\ntopics = "t.jsonl"\nqrels = "q.txt"\n[indexes]\n[experiment.NonFiction_base]\n'
        )
        with pytest.raises(ValueError, match="needs 'out_dir'"):
            load_experiment_file(path)

    def test_relative_paths_resolve_against_file(self, tmp_path, index_dirs, fixtures_dir):
        nested = tmp_path / "conf"
        nested.mkdir()
        body = "[experiment.NonFiction_base]\n"
        path = self.write(nested, index_dirs, fixtures_dir, body)
        _, meta = load_experiment_file(path)
        assert meta["out_dir"] == nested / "out"


class TestConfigValidation:
    def test_unknown_id(self, index_dirs, fixtures_dir):
        with pytest.raises(ValueError, match="unknown configuration"):
            make_config("Mystery_RLM", index_dirs, fixtures_dir)

    def test_base_rejects_feedback(self, index_dirs, fixtures_dir):
        with pytest.raises(ValueError, match="takes no feedback"):
            make_config(
                "NonFiction_base", index_dirs, fixtures_dir, feedback=FeedbackParams()
            )

    def test_rlm_requires_feedback(self, index_dirs, fixtures_dir):
        with pytest.raises(ValueError, match="needs feedback"):
            make_config("Fiction_RLM", index_dirs, fixtures_dir, feedback=None)

    def test_missing_genre_index(self, fixtures_dir, index_dirs):
        only_nonfiction = {"nonfiction": index_dirs["nonfiction"]}
        with pytest.raises(ValueError, match="needs an index for 'fiction'"):
            make_config("Fiction_RLM", only_nonfiction, fixtures_dir)

    def test_depth_positive(self, index_dirs, fixtures_dir):
        with pytest.raises(ValueError, match="depth"):
            make_config("NonFiction_base", index_dirs, fixtures_dir, depth=0)

    def test_required_genres(self, index_dirs, fixtures_dir):
        base = make_config("NonFiction_base", index_dirs, fixtures_dir)
        assert base.required_genres() == ["nonfiction"]
        cross = make_config("Fiction_RLM", index_dirs, fixtures_dir)
        assert cross.required_genres() == ["fiction", "nonfiction"]
        merged = make_config("FictionNonFiction_RLM", index_dirs, fixtures_dir)
        assert merged.required_genres() == ["merged", "nonfiction"]


class TestRunBenchmark:
    def test_artifacts_written(self, benchmark):
        _, out_dir = benchmark
        for config_id in POLICIES:
            assert (out_dir / f"{config_id}.run").exists()
        for config_id in ("NonFiction_RLM", "Fiction_RLM", "FictionNonFiction_RLM"):
            assert (out_dir / f"{config_id}_expansion.tsv").exists()
        assert not (out_dir / "NonFiction_base_expansion.tsv").exists()
        assert (out_dir / REPORT_FILENAME).exists()
        assert (out_dir / TABLE_FILENAME).exists()
        assert (out_dir / PER_QUERY_FILENAME).exists()

    def test_every_config_evaluated(self, benchmark):
        report, _ = benchmark
        assert set(report.outcomes) == set(POLICIES)
        for config_id, outcome in report.outcomes.items():
            assert outcome.error is None, (config_id, outcome.error)
            assert outcome.eval_report is not None
            assert outcome.eval_report.evaluated_qids == ["q1", "q2", "q3", "q4", "q5"]
            for metric in AGGREGATE_METRICS:
                assert 0.0 <= outcome.eval_report.aggregates[metric] <= 1.0

    def test_significance_against_both_baselines(self, benchmark):
        report, _ = benchmark
        assert "NonFiction_base" not in report.significance.get("NonFiction_base", {})
        for config_id in ("Fiction_RLM", "FictionNonFiction_RLM"):
            against = report.significance[config_id]
            assert set(against) == set(BASELINE_IDS)
            for baseline_id in BASELINE_IDS:
                per_metric = against[baseline_id]
                assert set(per_metric) == set(AGGREGATE_METRICS)
                for metric, cell in per_metric.items():
                    assert 0.0 <= cell["p"] <= 1.0
                    assert cell["n"] == 5
        # baselines are compared to each other only
        assert set(report.significance["NonFiction_RLM"]) == {"NonFiction_base"}

    def test_run_files_parse_and_match_report(self, benchmark, fixtures_dir):
        report, out_dir = benchmark
        qrels = load_qrels(fixtures_dir / "qrels.txt")
        for config_id in POLICIES:
            run = load_run(out_dir / f"{config_id}.run")
            assert run.run_tag == config_id
            fresh = evaluate_run(run, qrels, depth=DEPTH)
            stored = report.outcomes[config_id].eval_report
            for metric in AGGREGATE_METRICS:
                # run files carry 6-decimal scores; ranking is unchanged
                assert fresh.aggregates[metric] == pytest.approx(
                    stored.aggregates[metric], abs=1e-12
                )

    def test_cross_genre_run_matches_manual_composition(
        self, benchmark, indexes, topics
    ):
        _, out_dir = benchmark
        run = load_run(out_dir / "Fiction_RLM.run")
        params = FeedbackParams(**FEEDBACK)
        for topic in topics:
            query = analyze_query(topic.qid, topic.query, CFG)
            expansion = expand_query(query, POLICIES["Fiction_RLM"], params, indexes)
            hits = search_weighted(indexes["nonfiction"], expansion.weighted_query, DEPTH)
            assert [h.passage_id for h in run.hits[topic.qid]] == [h.passage_id for h in hits]
            for loaded, computed in zip(run.hits[topic.qid], hits):
                assert loaded.score == pytest.approx(computed.score, abs=1e-6)

    def test_expansion_tsv_shape(self, benchmark):
        _, out_dir = benchmark
        lines = (out_dir / "Fiction_RLM_expansion.tsv").read_text().splitlines()
        assert lines[0] == "qid\tterm\tweight\tsource_genre\tstatus"
        assert len(lines) > 1
        for line in lines[1:]:
            qid, term, weight, source, status = line.split("\t")
            assert qid in {"q1", "q2", "q3", "q4", "q5"}
            assert source == "fiction"
            assert status in {"kept", "filtered"}
            float(weight)

    def test_report_json_round_trips(self, benchmark):
        report, out_dir = benchmark
        on_disk = json.loads((out_dir / REPORT_FILENAME).read_text())
        assert on_disk == report.to_dict()
        assert on_disk["provenance"]["tool_version"]
        assert set(on_disk["provenance"]["index_hashes"]) == {"fiction", "nonfiction", "merged"}
        assert "generated_at" not in on_disk["provenance"]

    def test_alpha_one_rlm_equals_plain_bm25(self, tmp_path, index_dirs, fixtures_dir):
        configs = [
            make_config("NonFiction_base", index_dirs, fixtures_dir),
            make_config(
                "NonFiction_RLM",
                index_dirs,
                fixtures_dir,
                feedback=FeedbackParams(
                    feedback_docs=5, expansion_terms=50, alpha=1.0, mu=1000.0
                ),
            ),
        ]
        report = run_benchmark(configs, tmp_path / "out")
        base = report.outcomes["NonFiction_base"].eval_report.aggregates
        rlm = report.outcomes["NonFiction_RLM"].eval_report.aggregates
        for metric in AGGREGATE_METRICS:
            assert rlm[metric] == pytest.approx(base[metric], abs=1e-12), metric
        cell = report.significance["NonFiction_RLM"]["NonFiction_base"]["MAP"]
        assert cell["p"] == 1.0
        assert cell["note"] == "identical"

    def test_failing_config_isolated(self, tmp_path, index_dirs, fixtures_dir):
        broken_dirs = dict(index_dirs)
        broken_dirs["fiction"] = tmp_path / "missing"
        configs = [
            make_config("NonFiction_base", index_dirs, fixtures_dir),
            make_config("Fiction_RLM", broken_dirs, fixtures_dir),
        ]
        report = run_benchmark(configs, tmp_path / "out")
        assert report.outcomes["NonFiction_base"].error is None
        assert report.outcomes["NonFiction_base"].eval_report is not None
        assert report.outcomes["Fiction_RLM"].error is not None
        assert report.outcomes["Fiction_RLM"].eval_report is None
        table = (tmp_path / "out" / TABLE_FILENAME).read_text()
        assert "failed (" in table
        assert "Fiction_RLM" not in report.significance

    def test_rejects_duplicate_ids(self, tmp_path, index_dirs, fixtures_dir):
        config = make_config("NonFiction_base", index_dirs, fixtures_dir)
        with pytest.raises(ValueError, match="duplicate configuration"):
            run_benchmark([config, config], tmp_path / "out")

    def test_rejects_empty_config_list(self, tmp_path):
        with pytest.raises(ValueError, match="no configurations"):
            run_benchmark([], tmp_path / "out")

    def test_byte_identical_reruns(self, tmp_path, index_dirs, fixtures_dir, benchmark):
        _, first_dir = benchmark
        configs = [make_config(cid, index_dirs, fixtures_dir) for cid in POLICIES]
        second_dir = tmp_path / "again"
        run_benchmark(configs, second_dir)
        for name in [f"{cid}.run" for cid in POLICIES] + [
            REPORT_FILENAME,
            TABLE_FILENAME,
            PER_QUERY_FILENAME,
            "Fiction_RLM_expansion.tsv",
        ]:
            assert (second_dir / name).read_bytes() == (first_dir / name).read_bytes(), name

    def test_timestamp_opt_in(self, tmp_path, index_dirs, fixtures_dir):
        configs = [make_config("NonFiction_base", index_dirs, fixtures_dir)]
        report = run_benchmark(configs, tmp_path / "out", include_timestamps=True)
        assert "generated_at" in report.provenance


class TestHashIndexDir:
    def test_stable_and_distinct(self, index_dirs):
        first = hash_index_dir(index_dirs["fiction"])
        assert hash_index_dir(index_dirs["fiction"]) == first
        assert hash_index_dir(index_dirs["nonfiction"]) != first
        assert len(first) == 64


class TestEmitters:
    @staticmethod
    def _minimal_report(significant_map=False, significant_both=False):
        per_query = {f"q{i}": {"AP": 0.5, "Recall": 0.5, "nDCG": 0.5, "P@10": 0.1, "RR": 0.5} for i in range(3)}
        def outcome(cid):
            return {
                "config_id": cid,
                "run_tag": cid,
                "error": None,
                "unanswerable_qids": [],
                "fallbacks": {},
                "expansions": {},
                "eval": {
                    "aggregates": {"MAP": 0.1234567, "Recall": 0.25, "nDCG": 0.5, "P@10": 0.1, "MRR": 0.75},
                    "per_query": per_query,
                },
            }

        significance = {}
        if significant_map:
            significance.setdefault("Fiction_RLM", {})["NonFiction_base"] = {
                "MAP": {"significant": True, "p": 0.01}
            }
        if significant_both:
            significance.setdefault("Fiction_RLM", {}).setdefault("NonFiction_base", {})[
                "nDCG"
            ] = {"significant": True, "p": 0.02}
            significance["Fiction_RLM"]["NonFiction_RLM"] = {
                "nDCG": {"significant": True, "p": 0.03}
            }
        return {
            "outcomes": {
                "NonFiction_base": outcome("NonFiction_base"),
                "Fiction_RLM": outcome("Fiction_RLM"),
            },
            "significance": significance,
            "provenance": {},
        }

    def test_table_four_decimals_no_marks(self):
        table = emit_table(self._minimal_report())
        lines = table.splitlines()
        assert lines[0].startswith("Configuration")
        for metric in AGGREGATE_METRICS:
            assert metric in lines[0]
        fiction_row = next(l for l in lines if l.startswith("Fiction_RLM"))
        assert "0.1235" in fiction_row  # rounded, not truncated
        assert "*" not in fiction_row
        assert "†" not in fiction_row
        assert any("* p < 0.05 vs NonFiction_base" in l for l in lines)

    def test_table_single_superscript(self):
        table = emit_table(self._minimal_report(significant_map=True))
        fiction_row = next(
            l for l in table.splitlines() if l.startswith("Fiction_RLM")
        )
        assert "0.1235*" in fiction_row
        assert "0.5000*" not in fiction_row  # only the MAP column is marked

    def test_table_both_superscripts(self):
        table = emit_table(self._minimal_report(significant_map=True, significant_both=True))
        fiction_row = next(l for l in table.splitlines() if l.startswith("Fiction_RLM"))
        assert "0.5000*†" in fiction_row

    def test_per_query_csv(self, benchmark):
        report, out_dir = benchmark
        text = (out_dir / PER_QUERY_FILENAME).read_text()
        lines = text.splitlines()
        assert lines[0] == "qid,config,ap"
        assert len(lines) == 1 + 5 * len(POLICIES)
        first = lines[1].split(",")
        assert first[0] == "q1"
        assert first[1] == "NonFiction_base"
        float(first[2])
        assert text == emit_per_query(report.to_dict())

    def test_terms_listing(self, benchmark):
        report, _ = benchmark
        data = report.to_dict()
        listing = emit_terms(data, "q1", "Fiction_RLM")
        lines = listing.splitlines()
        assert lines[0] == "# q1 / Fiction_RLM"
        assert lines[1] == "rank\tterm\tweight\tstatus"
        rows = [l.split("\t") for l in lines[2:]]
        assert 0 < len(rows) <= FEEDBACK["expansion_terms"]
        weights = [float(r[2]) for r in rows]
        assert weights == sorted(weights, reverse=True)
        assert [int(r[0]) for r in rows] == list(range(1, len(rows) + 1))
        assert all(r[3] in {"kept", "filtered"} for r in rows)

    def test_terms_overlap_marked_bold(self, benchmark):
        report, _ = benchmark
        data = report.to_dict()
        counterpart_kept = {
            t["term"]
            for t in data["outcomes"]["NonFiction_RLM"]["expansions"]["q1"]["terms"]
            if t["kept"]
        }
        listing = emit_terms(data, "q1", "Fiction_RLM")
        for line in listing.splitlines()[2:]:
            term_cell = line.split("\t")[1]
            if term_cell.startswith("**"):
                assert term_cell.strip("*") in counterpart_kept
            else:
                assert term_cell not in counterpart_kept

    def test_terms_unknown_config(self, benchmark):
        report, _ = benchmark
        with pytest.raises(KeyError, match="no configuration"):
            emit_terms(report.to_dict(), "q1", "Made_Up")

    def test_terms_without_expansion(self, benchmark):
        report, _ = benchmark
        with pytest.raises(KeyError, match="no expansion"):
            emit_terms(report.to_dict(), "q1", "NonFiction_base")


class TestRunGrid:
    DOCS = (2, 3)
    TERMS = (3, 5)

    def test_matches_independent_evaluation(self, index_dirs, fixtures_dir, indexes, topics):
        result = run_grid(
            "Fiction_RLM",
            index_dirs,
            fixtures_dir / "topics.jsonl",
            fixtures_dir / "qrels.txt",
            depth=DEPTH,
            docs_grid=self.DOCS,
            terms_grid=self.TERMS,
        )
        assert len(result.cells) == len(self.DOCS) * len(self.TERMS)
        qrels = load_qrels(fixtures_dir / "qrels.txt")
        for cell in result.cells:
            assert cell.error is None
            params = FeedbackParams(
                feedback_docs=cell.feedback_docs,
                expansion_terms=cell.expansion_terms,
                alpha=0.5,
                mu=1000.0,
            )
            hits = {}
            for topic in topics:
                query = analyze_query(topic.qid, topic.query, CFG)
                expansion = expand_query(query, POLICIES["Fiction_RLM"], params, indexes)
                hits[topic.qid] = search_weighted(
                    indexes["nonfiction"], expansion.weighted_query, DEPTH
                )
            expected = evaluate_run(RunFile(hits=hits, run_tag="x"), qrels, depth=DEPTH)
            for metric in AGGREGATE_METRICS:
                assert cell.metrics[metric] == pytest.approx(
                    expected.aggregates[metric], abs=1e-12
                ), (cell.feedback_docs, cell.expansion_terms, metric)
        best_map = max(c.metrics["MAP"] for c in result.cells)
        assert result.best.metrics["MAP"] == best_map

    def test_workers_do_not_change_results(self, index_dirs, fixtures_dir):
        kwargs = dict(
            index_dirs=index_dirs,
            topics_path=fixtures_dir / "topics.jsonl",
            qrels_path=fixtures_dir / "qrels.txt",
            depth=DEPTH,
            docs_grid=self.DOCS,
            terms_grid=self.TERMS,
        )
        serial = run_grid("NonFiction_RLM", **kwargs)
        threaded = run_grid("NonFiction_RLM", workers=4, **kwargs)
        assert serial.to_csv() == threaded.to_csv()
        assert (
            serial.best.feedback_docs,
            serial.best.expansion_terms,
        ) == (threaded.best.feedback_docs, threaded.best.expansion_terms)

    def test_base_config_has_no_grid(self, index_dirs, fixtures_dir):
        with pytest.raises(ValueError, match="no feedback parameters"):
            run_grid(
                "NonFiction_base",
                index_dirs,
                fixtures_dir / "topics.jsonl",
                fixtures_dir / "qrels.txt",
            )
