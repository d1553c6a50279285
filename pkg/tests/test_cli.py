"""End-to-end CLI pipeline: artifacts, provenance hashes, exit codes."""

import csv
import json
import warnings
from pathlib import Path
from types import SimpleNamespace

import pytest

from envexplain.cli import ABLATION_VARIANTS, main
from envexplain.config import config_hash, load_config
from envexplain.graphs import deserialize


def write_config(path: Path, run_dir: Path, **overrides) -> Path:
    data = {
        "seed": 0,
        "run_dir": str(run_dir),
        "explain_split": "test",
        "epochs": 1,
        "batch_size": 32,
        "num_samples": 1,
        "hidden_dim": 32,
        "num_envs": 3,
        "gen": {"num_graphs": 60, "base_families": ["path", "tree", "wheel"],
                "seed": 0},
        "split": {"kind": "none"},
        "classifier": {"hidden_dim": 16, "num_layers": 2, "epochs": 2,
                       "seed": 0},
        "bench": {"sizes": [200, 400], "repeats": 1},
        "sweep": {"densities": [0.1], "reward_weights": [0.5],
                  "recon_weights": [2.0]},
    }
    data.update(overrides)
    path.write_text(json.dumps(data))
    return path


def run(*argv) -> int:
    # small fixtures trip the analyzer's documented all-dims fallback
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    run_dir = base / "run"
    cfg_path = write_config(base / "cfg.json", run_dir)
    for command in ("gen", "train-gnn", "fit-npaf", "train-explainer",
                    "explain", "evaluate"):
        argv = [command, "--config", cfg_path]
        if command == "explain":
            argv += ["--index", 0]
        assert run(*argv) == 0, command
    return SimpleNamespace(base=base, run_dir=run_dir, cfg_path=cfg_path,
                           cfg=load_config(cfg_path))


class TestArtifacts:
    def test_layout(self, pipeline):
        d = pipeline.run_dir
        for name in ("dataset.jsonl", "model/classifier.json", "envmodel.json",
                     "explainer/manifest.json", "metrics.csv", "metrics.json",
                     "metrics_rows.csv", "log.csv", "run.json",
                     "explanations/graph-0000.dot",
                     "explanations/graph-0000.json"):
            assert (d / name).exists(), name

    def test_dataset_split_sizes(self, pipeline):
        dataset = deserialize(pipeline.run_dir / "dataset.jsonl")
        meta = json.loads((pipeline.run_dir / "dataset.jsonl.meta.json").read_text())
        assert meta["num_graphs"] == len(dataset) == 60
        assert meta["splits"]["train"] == len(dataset.split("train"))

    def test_provenance_hashes_agree(self, pipeline):
        expected = config_hash(pipeline.cfg)
        run_meta = json.loads((pipeline.run_dir / "run.json").read_text())
        assert run_meta["config_hash"] == expected
        for meta_file in ("dataset.jsonl.meta.json", "model/meta.json",
                          "envmodel.json.meta.json", "explainer/meta.json",
                          "metrics.csv.meta.json"):
            meta = json.loads((pipeline.run_dir / meta_file).read_text())
            assert meta["config_hash"] == expected, meta_file

    def test_log_csv_one_row_per_epoch(self, pipeline):
        with open(pipeline.run_dir / "log.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "epoch"
        assert rows[0][-1] == "total"
        assert len(rows) == 1 + pipeline.cfg.epochs

    def test_metrics_has_three_methods(self, pipeline):
        with open(pipeline.run_dir / "metrics.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        methods = [r[0] for r in rows[1:]]
        assert methods == ["explainer", "random-edges", "top-degree-edges"]

    def test_explanation_masks_match_graph(self, pipeline):
        dataset = deserialize(pipeline.run_dir / "dataset.jsonl")
        g = dataset.split("test")[0]
        payload = json.loads(
            (pipeline.run_dir / "explanations/graph-0000.json").read_text())
        assert len(payload["node_mask"]) == g.n
        assert len(payload["edge_mask"]) == g.m
        assert payload["log_prob"] <= 0.0
        assert payload["config_hash"] == config_hash(pipeline.cfg)
        dot = (pipeline.run_dir / "explanations/graph-0000.dot").read_text()
        assert dot.startswith("digraph")


class TestExitCodes:
    def test_missing_dataset_exit_2(self, pipeline, tmp_path, capsys):
        code = run("train-gnn", "--config", pipeline.cfg_path,
                   "--run-dir", tmp_path / "empty")
        assert code == 2
        assert "dataset" in capsys.readouterr().err

    def test_missing_model_exit_2(self, pipeline, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", tmp_path / "r")
        assert run("gen", "--config", cfg) == 0
        assert run("train-explainer", "--config", cfg) == 2
        assert "classifier" in capsys.readouterr().err

    def test_config_error_exit_3_names_key(self, pipeline, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", tmp_path / "r",
                           prior_density=5)
        assert run("gen", "--config", cfg) == 3
        assert "prior_density" in capsys.readouterr().err

    def test_unknown_key_exit_3(self, pipeline, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"run_dir": str(tmp_path / "r"),
                                    "densty": 0.1}))
        assert run("gen", "--config", path) == 3
        assert "densty" in capsys.readouterr().err

    def test_unknown_subcommand_usage(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code != 0
        assert "invalid choice" in capsys.readouterr().err

    def test_explain_index_out_of_range_exit_3(self, pipeline, capsys):
        code = run("explain", "--config", pipeline.cfg_path, "--index", 999)
        assert code == 3
        assert "index" in capsys.readouterr().err

    def test_evaluate_refuses_foreign_model(self, pipeline, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", tmp_path / "r")
        assert run("gen", "--config", cfg) == 0
        assert run("train-gnn", "--config", cfg) == 0
        assert run("fit-npaf", "--config", cfg) == 0
        assert run("train-explainer", "--config", cfg) == 0
        # retrain the classifier under a different seed: new checkpoint bytes
        cfg2 = write_config(tmp_path / "c2.json", tmp_path / "r",
                            classifier={"hidden_dim": 16, "num_layers": 2,
                                        "epochs": 2, "seed": 5})
        assert run("train-gnn", "--config", cfg2) == 0
        code = run("evaluate", "--config", cfg2)
        assert code == 3
        assert "model_digest" in capsys.readouterr().err


class TestRerunDeterminism:
    def test_dataset_and_model_bytes(self, pipeline, tmp_path):
        cfg = write_config(tmp_path / "c.json", tmp_path / "r1")
        for command in ("gen", "train-gnn"):
            assert run(command, "--config", cfg) == 0
            assert run(command, "--config", cfg, "--run-dir", tmp_path / "r2") == 0
        for name in ("dataset.jsonl", "model/classifier.json"):
            a = (tmp_path / "r1" / name).read_bytes()
            b = (tmp_path / "r2" / name).read_bytes()
            assert a == b, name


class TestAblateAndSweep:
    def test_ablate_one_report_per_variant(self, pipeline):
        assert run("ablate", "--config", pipeline.cfg_path) == 0
        with open(pipeline.run_dir / "ablation.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert [r[0] for r in rows[1:]] == list(ABLATION_VARIANTS)
        for name in ABLATION_VARIANTS:
            variant = pipeline.run_dir / "ablate" / name
            assert (variant / "metrics.csv").exists()
            assert (variant / "explainer" / "manifest.json").exists()

    def test_ablate_variants_disable_modules(self, pipeline):
        meta = json.loads((pipeline.run_dir / "ablate" / "no-reward"
                           / "explainer" / "manifest.json").read_text())
        assert meta["hyperparams"]["w_reward"] == 0.0
        meta = json.loads((pipeline.run_dir / "ablate" / "no-agreement"
                           / "explainer" / "manifest.json").read_text())
        assert meta["hyperparams"]["w_agreement"] == 0.0

    def test_sweep_grid(self, pipeline):
        assert run("sweep", "--config", pipeline.cfg_path) == 0
        with open(pipeline.run_dir / "sweep.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 3  # one value per axis in the fixture config
        axes = [r[0] for r in rows[1:]]
        assert axes == ["density", "reward", "recon"]


class TestBench:
    def test_rows_match_sizes(self, pipeline):
        assert run("bench", "--config", pipeline.cfg_path) == 0
        with open(pipeline.run_dir / "bench.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["n", "m", "max_iter", "seconds"]
        assert [int(r[0]) for r in rows[1:]] == [200, 400]
