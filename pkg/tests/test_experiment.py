"""Config validation, seed derivation, and runner determinism."""

import json
import os

import numpy as np
import pytest

from pta.errors import ValidationError
from pta.evalharness import poisoning_degradation
from pta.experiment import (
    EvaluationConfig,
    WorldConfig,
    apply_overrides,
    build_poisoning_instance,
    build_proxy_set,
    build_world,
    config_from_dict,
    run_experiment,
    run_trial,
    sign_test_pvalue,
)
from pta.rng import hash64

SMALL_WORLD = {
    "preset": "retrieval",
    "n_clusters": 3,
    "cluster_count": 16,
    "input_dim": 96,
    "hidden_dim": 32,
}


def small_config(tmp_path, **extra):
    doc = {
        "world": dict(SMALL_WORLD),
        "attack": {"iterations": 10},
        "evaluation": {
            "task": "retrieval",
            "attacks": ["pta", "illusion"],
            "n_c": 6,
            "n_s": 4,
            "k": 10,
        },
        "trials": 2,
        "seed": 11,
        "output_dir": str(tmp_path / "out"),
    }
    doc.update(extra)
    return doc


class TestConfigValidation:
    def test_valid_round_trip(self, tmp_path):
        cfg = config_from_dict(small_config(tmp_path))
        assert cfg.trials == 2
        assert cfg.evaluation.attacks == ("pta", "illusion")
        assert cfg.config_hash() == config_from_dict(small_config(tmp_path)).config_hash()

    def test_collects_every_violation(self, tmp_path):
        doc = small_config(tmp_path)
        doc["trials"] = 0
        doc["evaluation"]["task"] = "ranking"
        doc["evaluation"]["attacks"] = ["pta", "zoo"]
        doc["attack"]["epsilon"] = -2
        doc["bogus"] = 1
        with pytest.raises(ValidationError) as err:
            config_from_dict(doc)
        text = str(err.value)
        for fragment in ("trials", "evaluation.task", "zoo", "attack", "bogus"):
            assert fragment in text

    def test_sweep_validation(self, tmp_path):
        doc = small_config(tmp_path)
        doc["sweep"] = {"parameter": "alpha", "values": []}
        with pytest.raises(ValidationError, match="sweep.values"):
            config_from_dict(doc)
        doc["sweep"] = {"parameter": "temperature", "values": [1]}
        with pytest.raises(ValidationError, match="sweep.parameter"):
            config_from_dict(doc)

    def test_output_dir_not_in_hash(self, tmp_path):
        a = config_from_dict(small_config(tmp_path))
        b = config_from_dict(small_config(tmp_path, output_dir=str(tmp_path / "elsewhere")))
        assert a.config_hash() == b.config_hash()

    def test_apply_overrides(self, tmp_path):
        doc = small_config(tmp_path)
        out = apply_overrides(doc, {"attack.alpha": "0.4", "evaluation.n_c": "3"})
        assert out["attack"]["alpha"] == 0.4
        assert out["evaluation"]["n_c"] == 3
        assert doc["attack"].get("alpha") is None  # original untouched


class TestSeedDerivation:
    def test_trial_seeds_stable_under_extension(self, tmp_path):
        cfg2 = config_from_dict(small_config(tmp_path))
        cfg3 = config_from_dict(small_config(tmp_path, trials=3))
        assert [hash64(cfg2.seed, t) for t in range(2)] == [
            hash64(cfg3.seed, t) for t in range(2)
        ]

    def test_rows_identical_across_runs(self, tmp_path):
        cfg = config_from_dict(small_config(tmp_path))
        rows_a = run_trial(cfg, 0)
        rows_b = run_trial(cfg, 0)
        assert [r.as_list() for r in rows_a] == [r.as_list() for r in rows_b]


class TestRunExperiment:
    def test_emits_byte_identical_csv(self, tmp_path):
        doc_a = small_config(tmp_path, output_dir=str(tmp_path / "a"))
        doc_b = small_config(tmp_path, output_dir=str(tmp_path / "b"))
        run_experiment(config_from_dict(doc_a))
        run_experiment(config_from_dict(doc_b))
        bytes_a = (tmp_path / "a" / "results.csv").read_bytes()
        bytes_b = (tmp_path / "b" / "results.csv").read_bytes()
        assert bytes_a == bytes_b

    def test_jobs_do_not_change_bytes(self, tmp_path):
        doc_a = small_config(tmp_path, output_dir=str(tmp_path / "serial"))
        doc_b = small_config(tmp_path, output_dir=str(tmp_path / "parallel"), jobs=2)
        run_experiment(config_from_dict(doc_a))
        run_experiment(config_from_dict(doc_b))
        assert (tmp_path / "serial" / "results.csv").read_bytes() == (
            tmp_path / "parallel" / "results.csv"
        ).read_bytes()

    def test_row_shape_without_sweep(self, tmp_path):
        cfg = config_from_dict(small_config(tmp_path, trials=1))
        manifest = run_experiment(cfg)
        csv_path = os.path.join(cfg.output_dir, "results.csv")
        lines = open(csv_path).read().strip().splitlines()
        # header + one row per (attack,) per trial
        assert len(lines) == 1 + len(cfg.evaluation.attacks)
        assert csv_path in manifest.emitted_files
        doc = json.load(open(os.path.join(cfg.output_dir, "results.json")))
        assert doc["config_hash"] == cfg.config_hash()
        assert all(row["config_hash"] == cfg.config_hash() for row in doc["rows"])

    def test_sweep_produces_paired_rows(self, tmp_path):
        doc = small_config(tmp_path, trials=1)
        doc["sweep"] = {"parameter": "alpha", "values": [0.0, 0.4]}
        cfg = config_from_dict(doc)
        run_experiment(cfg)
        rows = json.load(open(os.path.join(cfg.output_dir, "results.json")))["rows"]
        assert {r["sweep_value"] for r in rows} == {"0.0", "0.4"}
        # pta rows carry the swept alpha; illusion ignores it
        alphas = {r["sweep_value"]: r["alpha"] for r in rows if r["attack"] == "pta"}
        assert alphas == {"0.0": 0.0, "0.4": 0.4}

    def test_figures_toggle(self, tmp_path):
        doc = small_config(tmp_path, figures=False)
        cfg = config_from_dict(doc)
        manifest = run_experiment(cfg)
        assert not any(p.endswith(".png") for p in manifest.emitted_files)

    def test_manifest_convention_note(self, tmp_path):
        cfg = config_from_dict(small_config(tmp_path, trials=1))
        run_experiment(cfg)
        manifest = json.load(open(os.path.join(cfg.output_dir, "manifest.json")))
        assert "mean_rank_raw" in manifest["conventions"]
        assert manifest["per_trial_seeds"] == [hash64(cfg.seed, 0)]


class TestProxySetProtocol:
    def test_target_proxies_never_include_true_targets(self, tmp_path):
        cfg = config_from_dict(small_config(tmp_path))
        world = build_world(cfg.world, 7)
        proxies = build_proxy_set(world, 0, n_c=6, n_s=4)
        true = world.true_targets(0)
        for row in proxies.target:
            assert not any(np.array_equal(row, t) for t in true)

    def test_counts_validated(self, tmp_path):
        cfg = config_from_dict(small_config(tmp_path))
        world = build_world(cfg.world, 7)
        with pytest.raises(Exception):
            build_proxy_set(world, 0, n_c=999, n_s=0)


class TestExplicitClusters:
    def test_world_from_explicit_spec_list(self, tmp_path):
        rng = np.random.default_rng(2)
        direction = rng.normal(size=8)
        direction /= np.linalg.norm(direction)
        doc = small_config(tmp_path)
        doc["world"] = {
            "preset": "retrieval",
            "input_dim": 32,
            "hidden_dim": 16,
            "embed_dim": 8,
            "clusters": [
                {
                    "concept_direction": direction.tolist(),
                    "modality_offset": (0.5 * direction).tolist(),
                    "source_dispersion": 0.1,
                    "target_dispersion": 0.4,
                    "count": 8,
                    "label": "extra-modality",
                },
                {
                    "concept_direction": direction.tolist(),
                    "modality_offset": [0.0] * 8,
                    "count": 6,
                },
            ],
        }
        cfg = config_from_dict(doc)
        world = build_world(cfg.world, 5)
        assert world.n_clusters == 2
        assert world.clusters[0].label == "extra-modality"
        assert world.source_inputs[0].shape == (8, 32)

    def test_bad_cluster_doc_collected(self, tmp_path):
        doc = small_config(tmp_path)
        doc["world"]["clusters"] = [{"source_dispersion": 0.1}]
        with pytest.raises(ValidationError, match="clusters"):
            config_from_dict(doc)


class TestPoisoningInstance:
    def test_shapes_and_pairing(self):
        world = build_world(WorldConfig(**SMALL_WORLD), 3)
        ev = EvaluationConfig(task="poisoning", gallery_per_cluster=8)
        queries, gts, items = build_poisoning_instance(world, ev, 3)
        assert queries.shape[0] == len(gts) == items.shape[0] == 3 * 8
        assert gts == list(range(24))
        np.testing.assert_allclose(np.linalg.norm(queries, axis=1), 1.0, atol=1e-9)

    def test_clean_recall_reasonable(self):
        world = build_world(WorldConfig(preset="retrieval", n_clusters=4, cluster_count=30), 5)
        ev = EvaluationConfig(task="poisoning", gallery_per_cluster=20)
        queries, gts, items = build_poisoning_instance(world, ev, 5)
        report = poisoning_degradation(queries, gts, items, np.zeros((0, items.shape[1])), 0.0)
        assert report.recall_before > 30.0


class TestSignTest:
    def test_exact_tail_values(self):
        assert sign_test_pvalue(10, 0) == pytest.approx(1 / 1024)
        assert sign_test_pvalue(9, 1) == pytest.approx(11 / 1024)
        assert sign_test_pvalue(0, 0) == 1.0
        assert sign_test_pvalue(5, 5) > 0.5


class TestSquareOptimizerPath:
    def test_square_attack_through_runner(self, tmp_path):
        doc = small_config(tmp_path, trials=1)
        doc["attack"] = {"optimizer": "square", "epsilon": 16 / 255, "query_budget": 80}
        cfg = config_from_dict(doc)
        rows = run_trial(cfg, 0)
        assert {r.attack for r in rows} == {"pta", "illusion"}
        assert all(0.0 <= r.asr <= 100.0 for r in rows)
