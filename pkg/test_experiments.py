#!/usr/bin/env python3

"""
Tests for the experiment configuration, the replicated runner and the
command-line entry point
"""

import json
import os
import sys

import numpy as np
import pandas as pd
import pytest

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from gp_models.errors import ConfigError, GPDError
from gpd_experiments import main as cli
from gpd_experiments.config import ExperimentConfig, load_config
from gpd_experiments.main import (ALPHA_SWEEP_COLUMNS, INDUCING_SWEEP_COLUMNS, METRICS_FILE,
                                  RELIABILITY_COLUMNS, RELIABILITY_SUMMARY_FILE, RUN_RECORD_FILE,
                                  ExperimentRunner, emit_reliability, reliability_path, run_experiment,
                                  sweep_alpha_eps, sweep_inducing)
from utils.data_io import Dataset, synth_bernoulli_1d


def _config(tmp_path, **kwargs):
    options = dict(dataset="synth:sinusoid:60", method="gpd", alpha_eps=0.01, replicates=2, restarts=1,
                   mc_samples=50, out=str(tmp_path / "results"))
    options.update(kwargs)
    return ExperimentConfig(**options).validate()


def _three_class_dataset():
    rng = np.random.default_rng(0)
    return Dataset(X=rng.normal(size=(30, 2)), y=np.arange(30) % 3, num_classes=3)


def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "experiment.env"
    path.write_text("METHOD=gpr\nREPLICATES=4\nmc-samples=20\nALPHA_GRID=0.2,0.02\n", encoding="utf-8")
    config = load_config(path, {"replicates": 2, "seed": None})
    assert config.method == "gpr"
    assert config.replicates == 2
    assert config.mc_samples == 20
    assert config.alpha_grid == (0.2, 0.02)
    assert config.seed == 0


def test_config_rejects_unknown_keys_and_bad_values(tmp_path):
    path = tmp_path / "bad.env"
    path.write_text("COLOUR=blue\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(None, {"replicates": "many"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.env")


def test_config_method_specific_validation():
    with pytest.raises(ConfigError):
        load_config(None, {"method": "gpr", "alpha_eps": "0.01"})
    with pytest.raises(ConfigError):
        load_config(None, {"method": "laplace_gpc", "inducing": "10"})
    with pytest.raises(ConfigError):
        load_config(None, {"method": "gpr_platt", "calibration_fraction": 0.0})
    with pytest.raises(ConfigError):
        load_config(None, {"method": "svm"})
    assert load_config(None, {"inducing": "exact"}).inducing is None
    assert load_config(None, {"inducing": "25"}).inducing == 25
    assert load_config(None, {"alpha_eps": "AUTO"}).alpha_eps == "auto"


def test_config_hash_ignores_output_location_and_jobs(tmp_path):
    a = _config(tmp_path, out="first", jobs=1)
    b = _config(tmp_path, out="second", jobs=4)
    c = _config(tmp_path, seed=1)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 16
    int(a.config_hash(), 16)


def test_laplace_on_three_classes_fails_before_fitting(tmp_path):
    config = _config(tmp_path, method="laplace_gpc", alpha_eps="auto")
    with pytest.raises(ConfigError):
        ExperimentRunner(config, _three_class_dataset(), show_progress=False)


def test_run_writes_record_and_metrics(tmp_path):
    config = _config(tmp_path)
    record = run_experiment(config, show_progress=False)
    assert len(record.replicates) == 2
    assert all(r.success for r in record.replicates)
    assert all(r.fit_seconds > 0 and r.predict_seconds > 0 for r in record.replicates)

    out = tmp_path / "results"
    lines = (out / METRICS_FILE).read_text(encoding="utf-8").splitlines()
    assert lines[0] == f"# config_hash={config.config_hash()}"
    assert lines[1] == "replicate,error_rate,mnll,ece"
    assert len(lines) == 4

    stored = json.loads((out / RUN_RECORD_FILE).read_text(encoding="utf-8"))
    assert stored["config_hash"] == config.config_hash()
    assert stored["config"]["method"] == "gpd"
    assert [r["alpha_eps"] for r in stored["replicates"]] == [0.01, 0.01]
    assert stored["summary"]["successful_replicates"] == 2


def test_run_is_deterministic(tmp_path):
    first = _config(tmp_path, replicates=1, out=str(tmp_path / "a"))
    second = _config(tmp_path, replicates=1, out=str(tmp_path / "b"))
    run_experiment(first, show_progress=False)
    run_experiment(second, show_progress=False)
    assert (tmp_path / "a" / METRICS_FILE).read_bytes() == (tmp_path / "b" / METRICS_FILE).read_bytes()


def test_concurrent_replicates_match_sequential(tmp_path):
    sequential = ExperimentRunner(_config(tmp_path), show_progress=False).run()
    concurrent = ExperimentRunner(_config(tmp_path, jobs=2), show_progress=False).run()
    pd.testing.assert_frame_equal(sequential.metrics_frame(), concurrent.metrics_frame())


def test_auto_alpha_recorded(tmp_path):
    config = _config(tmp_path, alpha_eps="auto", alpha_grid=(0.1, 0.01), replicates=1)
    record = ExperimentRunner(config, show_progress=False).run()
    assert record.replicates[0].alpha_eps in (0.1, 0.01)


def test_alpha_sweep_table(tmp_path):
    config = _config(tmp_path, alpha_eps="auto", replicates=1)
    frame = sweep_alpha_eps(config, grid=[0.05], show_progress=False)
    assert list(frame.columns) == ALPHA_SWEEP_COLUMNS
    assert len(frame) == 1
    assert np.isfinite(frame["train_mnll"]).all() and np.isfinite(frame["test_mnll"]).all()
    text = (tmp_path / "results" / "alpha_sweep.csv").read_text(encoding="utf-8").splitlines()
    assert text[1] == "alpha_eps,train_mnll,test_mnll,replicate"


def test_alpha_sweep_needs_gpd(tmp_path):
    config = _config(tmp_path, method="gpr", alpha_eps="auto")
    with pytest.raises(ConfigError):
        ExperimentRunner(config, show_progress=False).sweep_alpha_eps([0.1])


def test_inducing_sweep_at_full_size_matches_exact(tmp_path):
    config = _config(tmp_path, dataset="synth:step:40", replicates=1)
    exact = ExperimentRunner(config, show_progress=False).run().replicates[0].report.error_rate
    frame = sweep_inducing(config, m_list=[5, 1000], show_progress=False)
    assert list(frame.columns) == INDUCING_SWEEP_COLUMNS
    assert frame["m"].tolist() == [5, 28]
    assert (frame["fit_seconds"] > 0).all()
    assert abs(frame["error_rate"].iloc[1] - exact) < 1e-9


def test_reliability_files(tmp_path):
    config = _config(tmp_path, bins=10)
    written = emit_reliability(config, show_progress=False)
    out = tmp_path / "results"
    assert written == [reliability_path(out, "gpd", 0), reliability_path(out, "gpd", 1)]
    summary = pd.read_csv(out / RELIABILITY_SUMMARY_FILE, comment="#", float_precision="round_trip")
    for replicate, path in enumerate(written):
        assert path.read_text(encoding="utf-8").startswith(f"# config_hash={config.config_hash()}\n")
        rows = pd.read_csv(path, comment="#", float_precision="round_trip")
        assert list(rows.columns) == RELIABILITY_COLUMNS
        assert len(rows) == 10
        n = rows["count"].sum()
        total = 0.0
        for count, accuracy, confidence in zip(rows["count"], rows["accuracy"], rows["confidence"]):
            total += (int(count) / int(n)) * abs(float(accuracy) - float(confidence))
        assert total == summary["ece"].iloc[replicate]
        assert (rows["lower_accuracy"] >= 0).all() and (rows["upper_accuracy"] <= 1).all()


def test_convergence_tables(tmp_path):
    config = _config(tmp_path, sizes=(15, 30), replicates=1, alpha_eps=0.01)
    frame, summary = ExperimentRunner(config, show_progress=False).convergence()
    assert len(frame) == 6
    assert set(frame["method"]) == {"gpd", "gpr", "laplace_gpc"}
    assert list(summary.columns) == ["n", "method", "median_mse", "sd_mse"]
    assert (frame["mse"].dropna() >= 0).all()


def test_speedup_table(tmp_path):
    config = _config(tmp_path, replicates=1)
    frame = ExperimentRunner(config, show_progress=False).speedup()
    assert list(frame.columns) == ["replicate", "gpd_fit_seconds", "laplace_fit_seconds", "speedup"]
    assert frame["gpd_fit_seconds"].iloc[0] > 0 and frame["laplace_fit_seconds"].iloc[0] > 0


def test_speedup_needs_binary_data(tmp_path):
    runner = ExperimentRunner(_config(tmp_path), _three_class_dataset(), show_progress=False)
    with pytest.raises(ConfigError):
        runner.speedup()


def test_cli_run_exit_code(tmp_path):
    code = cli.main(["run", "--dataset", "synth:sinusoid:40", "--replicates", "1", "--restarts", "1",
                     "--alpha-eps", "0.01", "--mc-samples", "20", "--out", str(tmp_path / "cli")])
    assert code == 0
    assert (tmp_path / "cli" / METRICS_FILE).exists()


def test_cli_configuration_error_exit_code(tmp_path):
    code = cli.main(["run", "--method", "gpr", "--alpha-eps", "0.01", "--out", str(tmp_path)])
    assert code == 2
    assert not (tmp_path / METRICS_FILE).exists()


def test_cli_laplace_on_multiclass_csv(tmp_path):
    path = tmp_path / "three.csv"
    path.write_text("x,label\n0.1,a\n0.2,b\n0.3,c\n0.4,a\n0.5,b\n0.6,c\n", encoding="utf-8")
    code = cli.main(["run", "--dataset", str(path), "--method", "laplace_gpc", "--out", str(tmp_path / "o")])
    assert code == 2


def test_cli_all_replicates_failed(tmp_path, monkeypatch):
    def broken_fit(self, replicate, method=None, **overrides):
        raise GPDError("induced failure")

    monkeypatch.setattr(ExperimentRunner, "fit", broken_fit)
    code = cli.main(["run", "--dataset", "synth:sinusoid:30", "--replicates", "2", "--out", str(tmp_path)])
    assert code == 1
    frame = pd.read_csv(tmp_path / METRICS_FILE, comment="#")
    assert frame["error_rate"].isna().all()


def test_runner_with_supplied_dataset(tmp_path):
    data = synth_bernoulli_1d(40, "step", seed=3)
    record = ExperimentRunner(_config(tmp_path, replicates=1), data, show_progress=False).run()
    assert record.num_points == 40
    assert record.dataset == data.name
