from __future__ import annotations

import json
from pathlib import Path

import pytest

from mtpipe.cli import main
from mtpipe.mockserver import MockCompletionServer

from .conftest import DATA_DIR


def write_config(tmp_path: Path, **extra) -> Path:
    config = {"seed": 1234, **extra}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


class TestArgHandling:
    def test_unknown_subcommand_exits_1(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["frobnicate"])
        assert excinfo.value.code == 1

    def test_no_subcommand_exits_1(self):
        assert main([]) == 1

    def test_version_prints_signatures(self, capsys):
        assert main(["--version"]) == 0
        out = capsys.readouterr().out
        assert "mtpipe" in out
        assert "tok:13a" in out

    def test_missing_required_setting_exits_1(self, tmp_path, capsys):
        assert main(["filter", "--corpus", str(DATA_DIR / "sample_corpus.tsv")]) == 1
        assert "seed" in capsys.readouterr().err


class TestConfigValidation:
    def test_schema_violation_reports_json_pointer(self, tmp_path, capsys):
        config = tmp_path / "bad.json"
        config.write_text(
            json.dumps({"seed": 1, "filter": {"bicleaner_min": 2.0}}), encoding="utf-8"
        )
        code = main(
            ["filter", "--config", str(config), "--corpus", str(DATA_DIR / "sample_corpus.tsv"),
             "--out", str(tmp_path / "pools")]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "/filter/bicleaner_min" in err

    def test_missing_seed_in_config_is_schema_violation(self, tmp_path, capsys):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"filter": {}}), encoding="utf-8")
        code = main(
            ["filter", "--config", str(config), "--corpus", str(DATA_DIR / "sample_corpus.tsv"),
             "--out", str(tmp_path / "pools")]
        )
        assert code == 1
        assert "seed" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"seed": 1, "turbo": True}), encoding="utf-8")
        assert main(["manifest", "--config", str(config), "--method", "lora",
                     "--out", str(tmp_path / "m.json")]) == 1

    def test_nonexistent_input_path_exits_1(self, tmp_path, capsys):
        assert main(["filter", "--seed", "1", "--corpus", str(tmp_path / "nope.tsv"),
                     "--out", str(tmp_path / "pools")]) == 1


class TestFilterCommand:
    def test_filter_is_deterministic_across_runs(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            code = main([
                "filter", "--seed", "77",
                "--corpus", str(DATA_DIR / "sample_corpus.tsv"),
                "--out", str(out),
            ])
            assert code == 0
        assert tree_bytes(out_a) == tree_bytes(out_b)

    def test_run_record_counts_match_files(self, tmp_path):
        out = tmp_path / "pools"
        assert main([
            "filter", "--seed", "5",
            "--corpus", str(DATA_DIR / "sample_corpus.tsv"),
            "--out", str(out),
        ]) == 0
        record = json.loads((out / "runrecord.json").read_text())
        for name, count in record["row_counts"].items():
            if name.startswith("stat:"):
                continue
            lines = (out / name).read_text().splitlines()
            assert len(lines) == count, name
        assert record["seed"] == 5
        assert record["versions"]["mtpipe"]


class TestManifestCommand:
    def test_lora_manifest_file(self, tmp_path):
        out = tmp_path / "lora.json"
        assert main(["manifest", "--method", "lora", "--out", str(out)]) == 0
        manifest = json.loads(out.read_text())
        assert manifest["lora_r"] == 256 and manifest["lora_alpha"] == 512

    def test_override_keeps_alpha_tied(self, tmp_path):
        out = tmp_path / "lora.json"
        assert main([
            "manifest", "--method", "lora", "--out", str(out), "--set", "lora_r=128",
        ]) == 0
        manifest = json.loads(out.read_text())
        assert manifest["lora_alpha"] == 256

    def test_bad_override_exits_1(self, tmp_path):
        assert main([
            "manifest", "--method", "full_ft", "--out", str(tmp_path / "m.json"),
            "--set", "dropout=0.5",
        ]) == 1


class TestPipelineCommands:
    @pytest.fixture
    def pools_dir(self, tmp_path) -> Path:
        out = tmp_path / "pools"
        config = write_config(tmp_path, filter={"example_pool_size": 40})
        assert main([
            "filter", "--config", str(config),
            "--corpus", str(DATA_DIR / "sample_corpus.tsv"), "--out", str(out),
        ]) == 0
        return out

    def test_build_train_and_eval_and_generate_and_score_and_analyze(self, tmp_path, pools_dir):
        train_out = tmp_path / "train.jsonl"
        assert main([
            "build-train", "--seed", "9", "--pools", str(pools_dir),
            "--out", str(train_out), "--n-records", "200",
        ]) == 0
        assert len(train_out.read_text().splitlines()) == 200

        eval_out = tmp_path / "eval.jsonl"
        assert main([
            "build-eval", "--seed", "9", "--test", str(DATA_DIR / "sample_test.tsv"),
            "--pools", str(pools_dir), "--out", str(eval_out),
        ]) == 0
        assert len(eval_out.read_text().splitlines()) == 80

        blind_out = tmp_path / "eval_blind.jsonl"
        assert main([
            "build-eval", "--seed", "9", "--test", str(DATA_DIR / "sample_test.tsv"),
            "--pools", str(pools_dir), "--out", str(blind_out), "--blind",
        ]) == 0
        assert all(
            json.loads(line)["completion"] == ""
            for line in blind_out.read_text().splitlines()
        )

        train_record = json.loads(
            (tmp_path / "train.jsonl.runrecord.json").read_text()
        )
        assert train_record["row_counts"]["records"] == 200

        results_out = tmp_path / "results.jsonl"
        with MockCompletionServer() as server:
            assert main([
                "generate", "--eval", str(eval_out), "--out", str(results_out),
                "--endpoint", server.url,
            ]) == 0
        assert len(results_out.read_text().splitlines()) == 80
        generate_record = json.loads(
            (tmp_path / "results.jsonl.runrecord.json").read_text()
        )
        assert generate_record["row_counts"]["rows"] == 80

        evaluations_out = tmp_path / "evaluations.csv"
        assert main([
            "score", "--eval", str(eval_out), "--results", str(results_out),
            "--system", "mock", "--segments", str(DATA_DIR / "sample_test.tsv"),
            "--out", str(evaluations_out),
            "--emit-triples", str(tmp_path / "triples.jsonl"),
        ]) == 0
        assert (tmp_path / "triples.jsonl").exists()

        reports_out = tmp_path / "reports"
        assert main([
            "analyze", "--evaluations", str(evaluations_out), "--out", str(reports_out),
            "--results", f"mock={results_out}",
        ]) == 0
        assert (reports_out / "scores_pivot.csv").exists()
        assert (reports_out / "runrecord.json").exists()
        hallucination = (reports_out / "hallucination.csv").read_text()
        for domain in ("chat", "flores", "law", "medical", "tico"):
            assert domain in hallucination  # per-segment domains re-joined via --segments

    def test_generate_exit_2_when_endpoint_down(self, tmp_path, pools_dir):
        eval_out = tmp_path / "eval.jsonl"
        assert main([
            "build-eval", "--seed", "9", "--test", str(DATA_DIR / "sample_test.tsv"),
            "--pools", str(pools_dir), "--out", str(eval_out),
        ]) == 0
        config = write_config(
            tmp_path,
            endpoint={"url": "http://127.0.0.1:9/v1/completions", "max_attempts": 2,
                      "backoff_base": 0.0, "backoff_cap": 0.0, "timeout": 2.0},
        )
        code = main([
            "generate", "--config", str(config), "--eval", str(eval_out),
            "--out", str(tmp_path / "results.jsonl"),
        ])
        assert code == 2
