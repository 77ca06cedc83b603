import json

import pytest

from ppmbench.bench import (
    BenchmarkConfig,
    CellResult,
    ConfigError,
    DatasetSpec,
    ModelSpec,
    cell_seed,
    markdown_tables,
    metrics_csv,
    run_matrix,
)
from ppmbench.eventlog import write_csv

from conftest import make_linear_log


@pytest.fixture
def log_csv(tmp_path):
    path = tmp_path / "linear.csv"
    write_csv(make_linear_log(40), path)
    return path


def small_config(tmp_path, log_csv, models=None, **overrides):
    raw = {
        "config_version": 1,
        "seed": 5,
        "out_dir": str(tmp_path / "out"),
        "datasets": [{"name": "linear", "path": str(log_csv)}],
        "models": models
        or [
            {"name": "markov", "architecture": "markov", "hyperparameters": {"order": 2}},
            {
                "name": "mlp",
                "architecture": "mlp",
                "hyperparameters": {"hidden": 8, "layers": 1, "epochs": 3, "patience": 3},
            },
        ],
    }
    raw.update(overrides)
    return BenchmarkConfig.from_dict(raw)


class TestConfigValidation:
    def test_empty_datasets_rejected(self, tmp_path, log_csv):
        config = small_config(tmp_path, log_csv, datasets=[])
        with pytest.raises(ConfigError):
            config.validate()

    def test_empty_models_rejected(self, tmp_path, log_csv):
        config = small_config(tmp_path, log_csv, models=[])
        config = BenchmarkConfig(datasets=config.datasets, models=())
        with pytest.raises(ConfigError):
            config.validate()

    def test_duplicate_names_rejected(self, tmp_path, log_csv):
        config = small_config(
            tmp_path,
            log_csv,
            models=[
                {"name": "m", "architecture": "markov"},
                {"name": "m", "architecture": "markov"},
            ],
        )
        with pytest.raises(ConfigError):
            config.validate()

    def test_missing_file_rejected(self, tmp_path):
        config = BenchmarkConfig(
            datasets=(DatasetSpec(name="d", path=str(tmp_path / "missing.csv")),),
            models=(ModelSpec(name="m", architecture="markov"),),
        )
        with pytest.raises(ConfigError):
            config.validate()

    def test_bad_fractions_rejected(self, tmp_path, log_csv):
        config = small_config(tmp_path, log_csv, split={"train": 0.9, "validation": 0.2})
        with pytest.raises(ConfigError):
            config.validate()

    def test_unsupported_version(self):
        with pytest.raises(ConfigError):
            BenchmarkConfig.from_dict({"config_version": 99})

    def test_hash_is_canonical(self, tmp_path, log_csv):
        a = small_config(tmp_path, log_csv)
        b = small_config(tmp_path, log_csv)
        assert a.canonical_hash() == b.canonical_hash()
        c = small_config(tmp_path, log_csv, seed=6)
        assert a.canonical_hash() != c.canonical_hash()


class TestCellSeeds:
    def test_derived_seeds_distinct_and_stable(self):
        seeds = {cell_seed(7, d, m, 3) for d in range(4) for m in range(3)}
        assert len(seeds) == 12
        assert cell_seed(7, 2, 1, 3) == 7 ^ 7


class TestRunMatrix:
    def test_full_run_writes_reports(self, tmp_path, log_csv):
        config = small_config(tmp_path, log_csv)
        record = run_matrix(config)
        assert len(record.cells) == 2
        assert all(c.error is None for c in record.cells)
        out = tmp_path / "out"
        assert (out / "metrics.csv").exists()
        assert (out / "report.md").exists()
        assert (out / "run_record.json").exists()
        assert (out / "cells" / "linear__markov.result.json").exists()
        assert (out / "cells" / "linear__markov.manifest.csv").exists()
        record_json = json.loads((out / "run_record.json").read_text())
        assert record_json["config_hash"] == config.canonical_hash()

    def test_identical_split_manifests_across_models(self, tmp_path, log_csv):
        config = small_config(tmp_path, log_csv)
        record = run_matrix(config)
        hashes = {c.manifest_sha256 for c in record.cells}
        assert len(hashes) == 1

    def test_cell_failure_is_recorded_and_skipped(self, tmp_path, log_csv):
        config = small_config(
            tmp_path,
            log_csv,
            models=[
                {"name": "ok", "architecture": "markov"},
                {"name": "broken", "architecture": "mlp", "hyperparameters": {"hidden": 0}},
            ],
        )
        record = run_matrix(config)
        by_name = {c.model: c for c in record.cells}
        assert by_name["ok"].error is None
        assert by_name["broken"].error is not None
        assert "hidden" in by_name["broken"].error

    def test_determinism_byte_identical_metrics(self, tmp_path, log_csv):
        c1 = small_config(tmp_path, log_csv, out_dir=str(tmp_path / "a"))
        c2 = small_config(tmp_path, log_csv, out_dir=str(tmp_path / "b"))
        run_matrix(c1)
        run_matrix(c2)
        a = (tmp_path / "a" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert a == b


class TestReports:
    def make_cells(self):
        return [
            CellResult(
                dataset="d1", model="m1", seed=0,
                metric_rows=[["d1", "m1", "next_activity", "accuracy", 0.9, 10],
                             ["d1", "m1", "next_time", "mae_days", 2.0, 10]],
            ),
            CellResult(
                dataset="d1", model="m2", seed=1,
                metric_rows=[["d1", "m2", "next_activity", "accuracy", 0.8, 10],
                             ["d1", "m2", "next_time", "mae_days", 1.0, 10]],
            ),
        ]

    def test_metrics_csv_sorted_and_typed(self):
        text = metrics_csv(self.make_cells())
        lines = text.splitlines()
        assert lines[0] == "dataset,model,task,metric,value,n_samples"
        assert lines[1].startswith("d1,m1,next_activity,accuracy,0.9")

    def test_markdown_best_highlighting(self):
        text = markdown_tables(self.make_cells())
        # higher accuracy wins; lower MAE wins
        assert "**0.9000**" in text
        assert "**1.0000**" in text
        assert "**0.8000**" not in text
        assert "**2.0000**" not in text


class TestParallelJobs:
    def test_jobs_two_matches_serial(self, tmp_path, log_csv):
        serial = small_config(tmp_path, log_csv, out_dir=str(tmp_path / "serial"))
        parallel = small_config(tmp_path, log_csv, out_dir=str(tmp_path / "parallel"), jobs=2)
        run_matrix(serial)
        run_matrix(parallel)
        a = (tmp_path / "serial" / "metrics.csv").read_bytes()
        b = (tmp_path / "parallel" / "metrics.csv").read_bytes()
        assert a == b


class TestDecodeConfigPlumbing:
    def test_beam_and_random_strategies_run(self, tmp_path, log_csv):
        for strategy, extra in (("beam", {"beam_width": 2}), ("random", {})):
            config = small_config(
                tmp_path,
                log_csv,
                out_dir=str(tmp_path / f"out_{strategy}"),
                models=[{"name": "markov", "architecture": "markov"}],
                decode={"strategy": strategy, **extra},
            )
            record = run_matrix(config)
            assert record.cells[0].error is None
            assert record.cells[0].metrics["dl_similarity"] is not None

    def test_user_decode_seed_honored(self, tmp_path, log_csv):
        config = small_config(
            tmp_path,
            log_csv,
            models=[{"name": "markov", "architecture": "markov"}],
            decode={"strategy": "random", "seed": 99},
        )
        record = run_matrix(config)
        assert record.cells[0].error is None


class TestHyperparameterValidation:
    def test_unknown_hyperparameter_is_config_error(self, tmp_path, log_csv):
        config = small_config(
            tmp_path, log_csv,
            models=[{"name": "m", "architecture": "gru", "hyperparameters": {"hiden": 8}}],
        )
        with pytest.raises(ConfigError):
            config.validate()

    def test_unknown_architecture_is_config_error(self, tmp_path, log_csv):
        config = small_config(
            tmp_path, log_csv,
            models=[{"name": "m", "architecture": "transformer"}],
        )
        with pytest.raises(ConfigError):
            config.validate()

    def test_bad_decode_strategy_is_config_error(self, tmp_path, log_csv):
        config = small_config(tmp_path, log_csv, decode={"strategy": "nucleus"})
        with pytest.raises(ConfigError):
            config.validate()


class TestPetriNetDataset:
    def test_timed_state_model_via_config(self, tmp_path, log_csv):
        net = {
            "places": ["p0", "p1", "p2", "p3", "p4"],
            "transitions": [
                {"id": "tA", "label": "A"}, {"id": "tB", "label": "B"},
                {"id": "tC", "label": "C"}, {"id": "tD", "label": "D"},
            ],
            "arcs": [
                {"from": "p0", "to": "tA"}, {"from": "tA", "to": "p1"},
                {"from": "p1", "to": "tB"}, {"from": "tB", "to": "p2"},
                {"from": "p2", "to": "tC"}, {"from": "tC", "to": "p3"},
                {"from": "p3", "to": "tD"}, {"from": "tD", "to": "p4"},
            ],
            "initial_marking": {"p0": 1},
        }
        net_path = tmp_path / "net.json"
        net_path.write_text(json.dumps(net))
        config = BenchmarkConfig.from_dict(
            {
                "config_version": 1,
                "seed": 2,
                "out_dir": str(tmp_path / "out"),
                "datasets": [
                    {"name": "linear", "path": str(log_csv), "petri_net": str(net_path)}
                ],
                "models": [
                    {
                        "name": "timedmlp",
                        "architecture": "mlp",
                        "hyperparameters": {
                            "input_mode": "timed_state",
                            "hidden": 16, "layers": 1, "epochs": 10, "patience": 10,
                        },
                    }
                ],
            }
        )
        record = run_matrix(config)
        assert record.cells[0].error is None
        assert record.cells[0].metrics["accuracy"] == 1.0
