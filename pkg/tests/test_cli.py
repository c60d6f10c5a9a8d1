"""Tests for toolsift CLI module"""
import json
import os
import numpy as np
import pytest

from toolsift.cli import build_parser, grad_check_instance, main, parse_args
from toolsift.storage import MANIFEST_FILE, iter_jsonl


def run(argv):
    """Run the CLI and return its exit code (0 when it returns normally)"""
    try:
        main(argv)
    except SystemExit as e:
        return e.code
    return 0


@pytest.fixture
def built(tmp_path, corpus_files):
    """Embeddings, MLC and refiner trained on tiny_corpus in one artifacts dir"""
    tools, queries = corpus_files
    out = str(tmp_path / "run")
    common = ["--tools", tools, "--queries", queries, "--out-dir", out]
    assert run(["build-embeddings", *common, "--dim", "128"]) == 0
    assert run(["train", "mlc", *common, "--epochs", "2"]) == 0
    assert run(["train", "refiner", *common, "--epochs", "2", "--n", "3", "--hidden", "8"]) == 0
    return out, tools, queries


class TestParser:
    def test_help_lists_commands(self):
        parser, subs = build_parser()
        assert {"build-embeddings", "train", "retrieve", "evaluate", "analyze", "gen-dataset", "judge",
                "grad-check", "stats", "split", "synth-corpus"} <= set(subs)

    def test_config_defaults_and_override(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"n-tools": 5, "kind": "overlapping"}))
        args = parse_args(["synth-corpus", "--config", str(config)])
        assert args.n_tools == 5 and args.kind == "overlapping"
        args = parse_args(["synth-corpus", "--config", str(config), "--n-tools", "7"])
        assert args.n_tools == 7

    def test_config_supplies_required_paths(self, tmp_path, corpus_files, capsys):
        tools, queries = corpus_files
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"tools": tools, "queries": queries}))
        assert run(["stats", "--config", str(config), "--out-dir", str(tmp_path)]) == 0
        assert json.loads(capsys.readouterr().out)["n_tools"] == 4

    def test_missing_required_without_config(self, tmp_path):
        assert run(["stats", "--out-dir", str(tmp_path)]) == 2

    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"bogus": 1}))
        assert run(["synth-corpus", "--config", str(config), "--out-dir", str(tmp_path)]) == 2


class TestExitCodes:
    """Errors map to documented exit codes"""

    def test_missing_file(self, tmp_path, capsys):
        code = run(["stats", "--tools", str(tmp_path / "none.jsonl"), "--queries", str(tmp_path / "q.jsonl"),
                    "--out-dir", str(tmp_path)])
        assert code == 2
        assert "none.jsonl" in capsys.readouterr().err

    def test_k_greater_than_n(self, tmp_path):
        assert run(["retrieve", "--query", "x", "--n", "2", "--k", "5", "--out-dir", str(tmp_path)]) == 2

    def test_malformed_corpus(self, tmp_path, write_jsonl_file):
        tools = write_jsonl_file("tools.jsonl", ["{broken"])
        queries = write_jsonl_file("queries.jsonl", [])
        assert run(["stats", "--tools", tools, "--queries", queries, "--out-dir", str(tmp_path)]) == 2

    def test_numerical_failure(self, tmp_path):
        code = run(["grad-check", "--objective", "mlc", "--instances", "1", "--tolerance", "0",
                    "--out-dir", str(tmp_path)])
        assert code == 3

    def test_transport_failure(self, tmp_path, corpus_files, write_jsonl_file):
        tools, _ = corpus_files
        fixture = write_jsonl_file("fixture.jsonl", [{"match": "never present", "response": "x"}])
        code = run(["gen-dataset", "--tools", tools, "--llm-provider", "mock", "--mock-fixture", fixture,
                    "--t-pool", "4", "--m-min", "1", "--m-max", "2", "--rounds", "2",
                    "--out-dir", str(tmp_path / "gen")])
        assert code == 4


class TestCommands:
    def test_build_embeddings_is_deterministic(self, tmp_path, corpus_files):
        tools, queries = corpus_files
        digests = []
        for _ in range(2):
            out = str(tmp_path / "emb")
            assert run(["build-embeddings", "--tools", tools, "--queries", queries, "--out-dir", out,
                        "--dim", "64"]) == 0
            with open(os.path.join(out, MANIFEST_FILE), "rb") as f:
                digests.append(f.read())
        assert digests[0] == digests[1]
        manifest = json.loads(digests[0])
        assert manifest["command"] == "build-embeddings"
        assert set(manifest["outputs"]) >= {"tool2vec.jsonl", "query_embeddings.jsonl", "coverage.json"}
        coverage = json.loads((tmp_path / "emb" / "coverage.json").read_text())
        assert coverage["tool2vec"]["uncovered"] == ["unused"]

    def test_retrieve(self, built, capsys):
        out, _, _ = built
        capsys.readouterr()
        assert run(["retrieve", "--artifacts", out, "--out-dir", out, "--query", "weather in paris",
                    "--n", "3", "--k", "2"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 1
        result = json.loads(lines[0])
        assert result["stage"] == "refined"
        assert len(result["candidates"]) == 2

    def test_retrieve_queries_file_stage1_only(self, built, capsys, write_jsonl_file):
        out, _, _ = built
        queries = write_jsonl_file("ask.jsonl", [{"query_id": "a", "text": "send mail"}, {"text": "rain?"}])
        capsys.readouterr()
        assert run(["retrieve", "--artifacts", out, "--out-dir", out, "--queries-file", queries,
                    "--method", "mlc", "--k", "3", "--stage1-only"]) == 0
        results = [json.loads(line) for line in capsys.readouterr().out.strip().splitlines()]
        assert [r["query_id"] for r in results] == ["a", "line-2"]
        assert all(r["stage"] == "stage1" and r["method"] == "mlc" for r in results)
        assert all(len(r["candidates"]) == 3 for r in results)

    def test_evaluate_and_analyze(self, built, capsys):
        out, tools, queries = built
        capsys.readouterr()
        assert run(["evaluate", "--tools", tools, "--queries", queries, "--artifacts", out,
                    "--out-dir", out, "--split", "test,val", "--ks", "1,3"]) == 0
        rows = json.loads(capsys.readouterr().out)
        assert [(r["method"], r["stage"]) for r in rows] == [("tool2vec", "stage1"), ("tool2vec", "refined")]
        assert set(rows[0]) >= {"R@1", "R@3", "N@1", "N@3"}
        assert os.path.isfile(os.path.join(out, "eval_summary.csv"))

        assert run(["analyze", "--tools", tools, "--queries", queries, "--artifacts", out, "--out-dir", out,
                    "--results", os.path.join(out, "results.jsonl"), "--k", "1"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert "tool2vec/stage1" in summary["failure_rates"]
        assert "similarity_tool2vec" in summary
        assert os.path.isfile(os.path.join(out, "embedding_points.csv"))

    def test_train_projection(self, built):
        out, tools, queries = built
        assert run(["train", "projection", "--tools", tools, "--queries", queries, "--out-dir", out,
                    "--epochs", "1", "--margin", "0.5"]) == 0
        rows = (open(os.path.join(out, "projection_loss.csv")).read().splitlines())
        assert rows[0] == "epoch,train_loss,val_loss" and len(rows) == 2

    def test_gen_dataset_with_mock(self, tmp_path, corpus_files, write_jsonl_file):
        tools, _ = corpus_files
        generated = json.dumps({"instruction": "What's the forecast for Lisbon?", "functions": ["get_weather"],
                                "explanation": "one lookup"})
        fixture = write_jsonl_file("fixture.jsonl", [
            {"match": "You are an expert in utilizing", "response": generated},
            {"match": "You are an expert at refining", "response": '{"status": "good", "refined_instruction": ""}'},
        ])
        out = tmp_path / "gen"
        assert run(["gen-dataset", "--tools", tools, "--llm-provider", "mock", "--mock-fixture", fixture,
                    "--t-pool", "4", "--m-min", "1", "--m-max", "2", "--rounds", "3",
                    "--out-dir", str(out)]) == 0
        queries = [obj for _, obj in iter_jsonl(str(out / "queries.jsonl"))]
        assert [q["query_id"] for q in queries] == ["gen-000000", "gen-000001", "gen-000002"]
        assert queries[0]["tools"] == ["weather"]

    def test_judge(self, tmp_path, write_jsonl_file, capsys):
        set_a = write_jsonl_file("a.jsonl", [{"text": "book me a table"}])
        set_b = write_jsonl_file("b.jsonl", [{"text": "call restaurant api then confirm"}])
        fixture = write_jsonl_file("fixture.jsonl", [{"response": "TIE"}])
        assert run(["judge", "--set-a", set_a, "--set-b", set_b, "--samples", "4", "--llm-provider", "mock",
                    "--mock-fixture", fixture, "--out-dir", str(tmp_path)]) == 0
        assert json.loads(capsys.readouterr().out)["ties"] == 4

    def test_stats_split_and_synth(self, tmp_path, corpus_files, capsys):
        tools, queries = corpus_files
        assert run(["stats", "--tools", tools, "--queries", queries, "--out-dir", str(tmp_path)]) == 0
        assert json.loads(capsys.readouterr().out)["n_tools"] == 4

        out = tmp_path / "split"
        assert run(["split", "--tools", tools, "--queries", queries, "--ratio", "0.5", "--out-dir", str(out)]) == 0
        splits = [obj["split"] for _, obj in iter_jsonl(str(out / "queries.jsonl"))]
        assert splits.count("val") == 3

        synth = tmp_path / "synth"
        assert run(["synth-corpus", "--kind", "disjoint", "--n-tools", "3", "--out-dir", str(synth)]) == 0
        assert len(list(iter_jsonl(str(synth / "tools.jsonl")))) == 3

    def test_grad_check_passes(self, tmp_path, capsys):
        assert run(["grad-check", "--instances", "20", "--out-dir", str(tmp_path)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) == {"mlc", "refiner", "projection"}
        assert all(row["passed"] for row in report.values())
        assert all(row["instances"] == 20 for row in report.values())


def test_grad_check_instance_unknown():
    with pytest.raises(ValueError):
        grad_check_instance("svm", np.random.default_rng(0))
