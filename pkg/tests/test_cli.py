"""End-to-end CLI wiring: subcommands, overrides, exit codes, artifacts."""

import json
from pathlib import Path

import pytest

from sevreg.cli import main
from sevreg.evaluation import read_results_csv

WORLD = {
    "feat_dim": 8,
    "signal_dims": 4,
    "nuisance_dims": 3,
    "n_labeled": 400,
    "n_unlabeled": 160,
    "n_typical": 120,
    "n_shifted_test": 100,
    "labeled_speakers": 20,
    "unlabeled_speakers": 10,
    "typical_speakers": 6,
    "shifted_speakers": 8,
    "t_range": [6, 12],
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared data directory plus a template config document."""
    root = tmp_path_factory.mktemp("cli")
    doc = {
        "data": {"root": str(root / "data"), "world": WORLD},
        "model": {"hidden_dim": 32, "embed_dim": 16},
        "stage1": {"lr": 3e-3, "epochs": 4},
        "stage3": {"lr": 3e-3, "epochs": 4},
        "stage2": {"batch_size": 32, "epochs": 1},
        "strategy": "coarse",
        "seed": 0,
        "seeds": [0],
        "run_root": str(root / "runs"),
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(doc))
    assert main(["gen-data", "--config", str(config_path)]) == 0
    return root, config_path, doc


def write_config(root: Path, doc: dict, name: str, **updates) -> Path:
    merged = json.loads(json.dumps(doc))
    merged.update(updates)
    path = root / name
    path.write_text(json.dumps(merged))
    return path


class TestConfigHandling:
    def test_invalid_delta_override_exits_1_no_artifacts(self, workspace, tmp_path):
        root, config_path, _ = workspace
        run_root = tmp_path / "runs"
        code = main(
            ["run-all", "--config", str(config_path), "stage1.huber_delta=-1"]
        )
        assert code == 1
        assert not run_root.exists()

    def test_unknown_override_key_exits_1(self, workspace):
        _, config_path, _ = workspace
        assert main(["run-all", "--config", str(config_path), "stage1.lrr=0.1"]) == 1

    def test_missing_corpus_exits_1(self, workspace, tmp_path):
        root, _, doc = workspace
        cfg = write_config(
            tmp_path, doc, "missing.json", data={"root": str(tmp_path / "nope"), "world": WORLD}
        )
        assert main(["run-all", "--config", str(cfg)]) == 1

    def test_bad_strategy_exits_1(self, workspace):
        _, config_path, _ = workspace
        assert main(["run-all", "--config", str(config_path), "strategy=magic"]) == 1

    def test_override_value_parsing(self, workspace):
        from sevreg.config import apply_overrides, config_from_dict

        doc = apply_overrides(
            {}, ["seeds=[3, 4]", "strategy=dis", "stage2.pairing.tau=0.5"]
        )
        cfg = config_from_dict(doc)
        assert cfg.seeds == (3, 4)
        assert cfg.strategy == "dis"
        assert cfg.stage2.pairing.tau == 0.5

    def test_training_divergence_exits_2(self, workspace, monkeypatch):
        _, config_path, _ = workspace
        from sevreg import cli
        from sevreg.errors import TrainingDivergedError

        def boom(cfg, corpora, out_root):
            raise TrainingDivergedError("loss went non-finite")

        monkeypatch.setattr(cli, "run_all", boom)
        assert main(["run-all", "--config", str(config_path)]) == 2


class TestStageChain:
    def test_stage_commands_chain(self, workspace, tmp_path):
        _, config_path, _ = workspace
        run_dir = tmp_path / "chain"
        base = ["--config", str(config_path), "--run-dir", str(run_dir)]
        assert main(["stage1", *base]) == 0
        assert (run_dir / "stage1.dsqc").exists()
        assert main(["pseudo-label", *base]) == 0
        assert (run_dir / "pseudo" / "manifest.json").exists()
        assert (run_dir / "pseudo_histogram.json").exists()
        assert main(["stage2", *base]) == 0
        assert (run_dir / "stage2.dsqc").exists()
        assert main(["stage3", *base]) == 0
        assert (run_dir / "model.dsqc").exists()
        assert main(["evaluate", *base]) == 0
        rows = read_results_csv(run_dir / "results.csv")
        assert {r["dataset"] for r in rows} == {"test", "shifted_test"}

    def test_dump_embeddings(self, workspace, tmp_path):
        _, config_path, _ = workspace
        run_dir = tmp_path / "emb"
        base = ["--config", str(config_path), "--run-dir", str(run_dir)]
        assert main(["stage1", *base]) == 0
        out = tmp_path / "emb.dsqe"
        assert (
            main(
                [
                    "dump-embeddings", "--config", str(config_path),
                    "--checkpoint", str(run_dir / "stage1.dsqc"),
                    "--corpus", "typical", "--out", str(out),
                ]
            )
            == 0
        )
        from sevreg.evaluation import read_embeddings

        vecs, labels, provs = read_embeddings(out)
        assert vecs.shape == (WORLD["n_typical"], 64)  # 2 * hidden_dim
        assert set(provs) == {"typical"}


class TestRunAll:
    def test_rows_per_seed_and_resolved_config(self, workspace, tmp_path):
        root, _, doc = workspace
        cfg = write_config(
            tmp_path, doc, "five.json", seeds=[0, 1, 2, 3, 4],
            run_root=str(tmp_path / "runs"),
            stage1={"lr": 3e-3, "epochs": 2}, stage3={"lr": 3e-3, "epochs": 2},
            strategy="baseline",
        )
        assert main(["run-all", "--config", str(cfg)]) == 0
        run_dirs = list((tmp_path / "runs").iterdir())
        assert len(run_dirs) == 1
        rows = read_results_csv(run_dirs[0] / "results.csv")
        for dataset in ("test", "shifted_test"):
            assert sum(r["dataset"] == dataset for r in rows) == 5
        resolved = json.loads((run_dirs[0] / "config.json").read_text())
        assert resolved["seeds"] == [0, 1, 2, 3, 4]
        assert (run_dirs[0] / "summary.json").exists()
        for seed in range(5):
            assert (run_dirs[0] / f"seed_{seed}" / "model.dsqc").exists()

    def test_determinism_across_invocations_and_env_root(
        self, workspace, tmp_path, monkeypatch
    ):
        root, config_path, doc = workspace
        cfg = write_config(
            tmp_path, doc, "det.json", run_root=str(tmp_path / "runsA")
        )
        assert main(["run-all", "--config", str(cfg)]) == 0
        run_a = next((tmp_path / "runsA").iterdir())
        monkeypatch.setenv("SEVREG_RUN_ROOT", str(tmp_path / "runsB"))
        assert main(["run-all", "--config", str(cfg)]) == 0
        monkeypatch.delenv("SEVREG_RUN_ROOT")
        run_b = (tmp_path / "runsB") / run_a.name  # same run id, new root
        assert run_b.exists()
        for rel in ("results.csv", "seed_0/model.dsqc", "seed_0/stage2.dsqc"):
            assert (run_a / rel).read_bytes() == (run_b / rel).read_bytes()


class TestHarnesses:
    def test_sweep_tau_subset_grid(self, workspace, tmp_path):
        root, _, doc = workspace
        cfg = write_config(
            tmp_path, doc, "sweep.json", run_root=str(tmp_path / "runs"),
        )
        assert main(["sweep-tau", "--config", str(cfg), "--grid", "1.0", "10.0"]) == 0
        sweep_dir = next(p for p in (tmp_path / "runs").iterdir() if p.name.startswith("sweep_"))
        payload = json.loads((sweep_dir / "sweep_tau.json").read_text())
        assert payload["grid"] == [1.0, 10.0]
        taus = {row["tau"] for row in payload["improvements"]}
        assert taus == {1.0, 10.0}
        for row in payload["improvements"]:
            assert row["median_srcc"] is not None

    def test_sweep_tau_rejects_baseline(self, workspace, tmp_path):
        root, _, doc = workspace
        cfg = write_config(
            tmp_path, doc, "sb.json", strategy="baseline",
            run_root=str(tmp_path / "runs"),
        )
        assert main(["sweep-tau", "--config", str(cfg)]) == 1

    def test_ablate_subset(self, workspace, tmp_path):
        root, _, doc = workspace
        cfg = write_config(
            tmp_path, doc, "ab.json", run_root=str(tmp_path / "runs"),
            stage1={"lr": 3e-3, "epochs": 2}, stage3={"lr": 3e-3, "epochs": 2},
        )
        assert (
            main(
                [
                    "ablate", "--config", str(cfg),
                    "--variants", "wo_var", "skip_stage2",
                ]
            )
            == 0
        )
        ablate_dir = next(p for p in (tmp_path / "runs").iterdir() if p.name.startswith("ablate_"))
        summary = json.loads((ablate_dir / "ablate_summary.json").read_text())
        assert set(summary) == {"wo_var", "skip_stage2"}
        assert summary["wo_var"]["run_id"] != summary["skip_stage2"]["run_id"]
