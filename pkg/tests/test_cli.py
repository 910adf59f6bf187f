"""CLI surface: subcommands, dotted overrides, env seed, exit codes."""

import json
import os

import numpy as np
import pytest

from pta.cli import main
from pta.numerics import EmbeddingSet
from pta.synthworld import write_embedding_csv


def write_config(tmp_path, **extra):
    doc = {
        "world": {
            "preset": "retrieval",
            "n_clusters": 3,
            "cluster_count": 12,
            "input_dim": 64,
            "hidden_dim": 24,
        },
        "attack": {"iterations": 5},
        "evaluation": {
            "task": "retrieval",
            "attacks": ["pta", "illusion"],
            "n_c": 4,
            "n_s": 3,
            "k": 8,
        },
        "trials": 1,
        "seed": 3,
    }
    doc.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


class TestEval:
    def test_eval_writes_outputs(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["eval", "--config", cfg, "--output", str(out)]) == 0
        for name in ("results.csv", "results.json", "manifest.json", "results.png"):
            assert (out / name).exists()

    def test_determinism_across_invocations(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["eval", "--config", cfg, "--output", str(a)]) == 0
        assert main(["eval", "--config", cfg, "--output", str(b)]) == 0
        assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()

    def test_dotted_override_changes_results(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "o"
        assert (
            main(
                [
                    "eval",
                    "--config",
                    cfg,
                    "--output",
                    str(out),
                    "--no-figures",
                    "--attack.alpha=0.4",
                    "--evaluation.n_c",
                    "3",
                ]
            )
            == 0
        )
        rows = json.load(open(out / "results.json"))["rows"]
        pta = [r for r in rows if r["attack"] == "pta"][0]
        assert pta["alpha"] == 0.4
        assert pta["n_c"] == 3

    def test_env_seed_override(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path)
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        monkeypatch.setenv("PTA_SEED", "99")
        assert main(["eval", "--config", cfg, "--output", str(out1), "--no-figures"]) == 0
        monkeypatch.delenv("PTA_SEED")
        assert main(
            ["eval", "--config", cfg, "--output", str(out2), "--seed", "99", "--no-figures"]
        ) == 0
        assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()

    def test_invalid_config_exit_code_and_no_partial_output(self, tmp_path):
        cfg = write_config(tmp_path, trials=0)
        out = tmp_path / "x"
        assert main(["eval", "--config", cfg, "--output", str(out)]) == 1
        assert not out.exists()  # validation is total: nothing was executed

    def test_theorem_violation_exit_code(self, tmp_path, monkeypatch):
        from pta.errors import BoundViolationError

        def boom(**kwargs):
            raise BoundViolationError("synthetic violation")

        monkeypatch.setattr("pta.cli.run_theory_suite", boom)
        assert main(["theory", "--output", str(tmp_path)]) == 3

    def test_numeric_error_exit_code(self, tmp_path, monkeypatch):
        from pta.errors import NumericError

        def boom(cfg):
            raise NumericError("synthetic numeric failure")

        monkeypatch.setattr("pta.cli.run_experiment", boom)
        cfg = write_config(tmp_path)
        assert main(["eval", "--config", cfg, "--output", str(tmp_path / "n")]) == 2

    def test_unknown_flag_rejected(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["eval", "--config", cfg, "--frobnicate", "1"]) == 1


class TestSweepAndPoison:
    def test_sweep_requires_sweep_section(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["sweep", "--config", cfg, "--output", str(tmp_path / "s")]) == 1

    def test_sweep_runs(self, tmp_path):
        cfg = write_config(tmp_path, sweep={"parameter": "alpha", "values": [0.0, 0.5]})
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", cfg, "--output", str(out), "--no-figures"]) == 0
        rows = json.load(open(out / "results.json"))["rows"]
        assert {r["sweep_value"] for r in rows} == {"0.0", "0.5"}

    def test_poison_forces_task(self, tmp_path):
        cfg = write_config(
            tmp_path,
            evaluation={
                "task": "retrieval",
                "attacks": ["pta"],
                "n_c": 4,
                "n_s": 3,
                "gallery_per_cluster": 8,
                "injection_ratio": 0.1,
            },
        )
        out = tmp_path / "poison"
        assert main(["poison", "--config", cfg, "--output", str(out), "--no-figures"]) == 0
        rows = json.load(open(out / "results.json"))["rows"]
        assert all(r["task"] == "poisoning" for r in rows)
        assert all(r["recall_at_1"] is not None for r in rows)


class TestAttackAndDetect:
    def test_attack_writes_traces(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "atk"
        assert main(["attack", "--config", cfg, "--output", str(out)]) == 0
        docs = json.load(open(out / "attack_results.json"))
        assert len(docs) == 2 * 3  # attacks x clusters
        assert all(d["within_budget"] for d in docs)
        assert (out / "attack_traces.png").exists()

    def test_detect_scores_embedding_file(self, tmp_path):
        rng = np.random.default_rng(0)
        vectors = np.vstack([0.1 * rng.normal(size=(20, 4)), [[9.0, 9.0, 9.0, 9.0]]])
        emb = EmbeddingSet(vectors, member_labels=tuple("a" * 21))
        path = tmp_path / "emb.csv"
        write_embedding_csv(path, emb)
        out = tmp_path / "det"
        assert (
            main(
                [
                    "detect",
                    "--input",
                    str(path),
                    "--output",
                    str(out),
                    "--detection.method=knn",
                    "--detection.neighbors_k=3",
                    "--detection.anomaly_ratio_r=0.05",
                ]
            )
            == 0
        )
        doc = json.load(open(out / "detection.json"))
        assert doc["outlier_indices"] == [20]
        lines = (out / "scores.csv").read_text().strip().splitlines()
        assert lines[0] == "index,score,flagged"
        assert len(lines) == 22

    def test_detect_requires_input(self, tmp_path):
        assert main(["detect", "--output", str(tmp_path)]) == 1

    def test_detect_parse_error_names_row(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("a,1.0,2.0\nb,oops,3.0\n")
        assert main(["detect", "--input", str(path), "--output", str(tmp_path)]) == 1
        assert "row 2" in capsys.readouterr().err


class TestTheoryCommand:
    def test_theory_suite_clean(self, tmp_path):
        out = tmp_path / "theory"
        code = main(
            [
                "theory",
                "--output",
                str(out),
                "--instances",
                "20",
                "--triples",
                "40",
                "--no-figures",
            ]
        )
        assert code == 0
        summary = json.load(open(out / "theory_summary.json"))
        assert summary["violations"] == 0
        assert summary["max_tradeoff_gap"] < 1e-4
        assert (out / "theory_results.csv").exists()

    def test_theory_replay_round_trip(self, tmp_path):
        import csv

        from pta.experiment import replay_theory_row

        out = tmp_path / "theory"
        main(["theory", "--output", str(out), "--instances", "5", "--triples", "1", "--no-figures"])
        with open(out / "theory_results.csv") as fh:
            rows = [r for r in csv.DictReader(fh) if r["kind"] == "tradeoff"]
        for row in rows:
            assert replay_theory_row(row) == pytest.approx(float(row["gap"]), abs=1e-9)


class TestImport:
    def test_import_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        emb = EmbeddingSet(rng.normal(size=(6, 5)), member_labels=("a", "a", "b", "b", "c", "c"))
        src = tmp_path / "in.csv"
        write_embedding_csv(src, emb)
        out = tmp_path / "imp"
        assert main(["import", "--input", str(src), "--role", "target", "--output", str(out)]) == 0
        summary = json.load(open(out / "import_summary.json"))
        assert summary == {
            "role": "target",
            "rows": 6,
            "dimension": 5,
            "tags": ["a", "b", "c"],
            "normalized": False,
            "file": "embeddings_target.csv",
        }
        from pta.synthworld import read_embedding_csv

        back = read_embedding_csv(out / "embeddings_target.csv")
        np.testing.assert_array_equal(back.vectors, emb.vectors)

    def test_import_bad_role(self, tmp_path):
        src = tmp_path / "in.csv"
        src.write_text("a,1.0,2.0\n")
        assert main(["import", "--input", str(src), "--role", "audio"]) == 1

    def test_import_parse_error(self, tmp_path):
        src = tmp_path / "in.csv"
        src.write_text("a,1.0\n")  # too narrow
        assert main(["import", "--input", str(src), "--role", "source"]) == 1
