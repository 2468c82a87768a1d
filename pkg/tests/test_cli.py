"""CLI pipeline tests on a tiny smoke-scale run directory."""
import json
from pathlib import Path

import numpy as np
import pytest

from rvl import cli
from rvl.agents import load_policy
from rvl.config import ExperimentConfig, config_from_dict


@pytest.fixture(scope="module")
def smoke_cfg() -> ExperimentConfig:
    return cli.smoke_config(ExperimentConfig(master_seed=7))


@pytest.fixture(scope="module")
def run_dir(smoke_cfg, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("run")
    cli.cmd_smoke(ExperimentConfig(master_seed=7), out)
    return out


def test_smoke_config_is_tiny(smoke_cfg):
    assert smoke_cfg.dataset.n_episodes == 50
    assert smoke_cfg.surrogate_c.epochs == 5
    assert smoke_cfg.sights.immediates == ()


def test_smoke_artifacts_exist(run_dir):
    assert (run_dir / "config.lock.json").exists()
    assert (run_dir / "dataset.jsonl").exists()
    assert (run_dir / "surrogate.json").exists()
    for name in ("rvl-short", "rvl-long", "qlearning", "smsa",
                 "combined-rvl-short-rvl-long"):
        assert (run_dir / "policies" / f"{name}.json").exists()
        assert (run_dir / "eval" / f"{name}.metrics.json").exists()
        assert (run_dir / "eval" / f"{name}.trajectory.csv").exists()
    for table in ("table3", "table4", "table5", "table6", "reward_vs_time",
                  "rmse_c", "rmse_d"):
        assert (run_dir / "report" / f"{table}.csv").exists()


def test_logs_have_expected_kinds(run_dir):
    text = (run_dir / "logs" / "rvl.csv").read_text()
    kinds = {line.split(",")[1] for line in text.splitlines()[2:]}
    assert kinds == {"virtual", "real-1", "real-120"}


def test_metrics_are_consistent(run_dir, smoke_cfg):
    doc = json.loads(
        (run_dir / "eval" / "combined-rvl-short-rvl-long.metrics.json").read_text())
    assert doc["config_hash"] == smoke_cfg.config_hash()
    assert doc["objective"] == pytest.approx(
        doc["c_minus_d"] * doc["final_v"], abs=1e-12)
    assert len(doc["step_rewards"]) == 120


def test_combined_policy_is_elementwise_max(run_dir):
    short, _ = load_policy(run_dir / "policies" / "rvl-short.json")
    long_, _ = load_policy(run_dir / "policies" / "rvl-long.json")
    comb, _ = load_policy(run_dir / "policies" / "combined-rvl-short-rvl-long.json")
    assert np.array_equal(
        comb.values, np.maximum(short.real.values, long_.real.values))


def test_report_tables_have_rows(run_dir):
    lines = (run_dir / "report" / "table3.csv").read_text().splitlines()
    assert lines[1] == "algorithm,C,D,V,C_minus_D,objective"
    names = [line.split(",")[0] for line in lines[2:]]
    assert "qlearning" in names and "smsa" in names
    assert any(n.endswith("(reference)") for n in names)
    table6 = (run_dir / "report" / "table6.csv").read_text().splitlines()
    assert len(table6) >= 2 + 5  # header rows plus one row per policy


def test_smoke_pipeline_is_deterministic(run_dir, tmp_path):
    """A second smoke run under the same master seed is byte-identical."""
    out2 = tmp_path / "again"
    cli.cmd_smoke(ExperimentConfig(master_seed=7), out2)
    for rel in ("policies/combined-rvl-short-rvl-long.json",
                "policies/rvl-long.json", "policies/qlearning.json",
                "report/table3.csv", "report/table6.csv"):
        assert (out2 / rel).read_bytes() == (run_dir / rel).read_bytes(), rel


def test_provenance_mismatch_rejected(run_dir):
    other = cli.smoke_config(ExperimentConfig(master_seed=8))
    with pytest.raises(cli.ArtifactError, match="refusing to mix"):
        cli.write_lock(run_dir, other)
    with pytest.raises(cli.ArtifactError, match="refusing to mix"):
        cli.cmd_evaluate(other, run_dir / "x",
                         run_dir / "policies" / "rvl-short.json")


def test_combine_rejects_non_sight_policy(run_dir, smoke_cfg):
    with pytest.raises(cli.ArtifactError, match="not a sight-policy"):
        cli.cmd_combine(smoke_cfg,
                        run_dir / "policies" / "qlearning.json",
                        run_dir / "policies" / "rvl-long.json")


def test_missing_artifacts_give_config_exit(tmp_path, capsys):
    rc = cli.main(["report", "--out", str(tmp_path / "empty")])
    assert rc == cli.EXIT_CONFIG
    assert "missing" in capsys.readouterr().err


def test_train_unknown_variant_errors(tmp_path):
    rc = cli.main(["train", "--variant", "bogus", "--out", str(tmp_path / "v")])
    assert rc == cli.EXIT_CONFIG


def test_evaluate_via_main(run_dir, tmp_path, capsys, monkeypatch):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text("master_seed: 7\n")
    # main() loads the full-size config; evaluating smoke artifacts must be
    # refused because the hashes differ
    rc = cli.main(["evaluate", "--config", str(cfg_path), "--out", str(run_dir),
                   str(run_dir / "policies" / "rvl-short.json")])
    assert rc == cli.EXIT_CONFIG


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("RVL_THREADS", "2")
    assert cli.worker_count() == 2
    monkeypatch.setenv("RVL_THREADS", "junk")
    assert cli.worker_count() >= 1
    monkeypatch.delenv("RVL_THREADS")
    assert cli.worker_count() >= 1


def test_apply_seed_override(run_dir):
    cfg = cli.smoke_config(ExperimentConfig())
    data = cfg.to_dict()
    data["master_seed"] = 7
    assert config_from_dict(data).config_hash() != cfg.config_hash()
