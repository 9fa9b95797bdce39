"""CLI surface: config handling, artifacts, determinism, exit codes."""

import json
import os

import pytest

from kdlab.cli import (
    DEFAULT_CONFIG,
    EXIT_CONTRACT,
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_OK,
    ExperimentConfig,
    main,
    run_compare,
    run_distill,
    run_train_teacher,
)
from kdlab.errors import ContractError
from kdlab.trajectory import parse_csv

# a fast configuration for CLI round-trip tests
FAST = {
    "task": {"kind": "gaussian_mixture", "classes": 3, "dim": 5, "n_per_class": 20,
             "spread": 0.7, "seed": 5},
    "teacher": {"hidden": [10, 10], "seed": 4},
    "student": {"hidden": [4]},
    "schedule": {"epochs": 3, "batch_size": 12, "lr0": 0.05, "decay_stages": [2],
                 "decay_rate": 0.1, "momentum": 0.9, "weight_decay": 5e-4},
    "seeds": [1, 2],
}


@pytest.fixture
def fast_config(tmp_path):
    doc = dict(FAST)
    doc["out"] = str(tmp_path / "runs")
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path), doc["out"]


def _config(out: str) -> ExperimentConfig:
    doc = dict(FAST)
    doc["out"] = out
    return ExperimentConfig.from_dict(doc)


class TestConfig:
    def test_defaults_complete(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.schedule.epochs == DEFAULT_CONFIG["schedule"]["epochs"]
        assert cfg.seeds == sorted(DEFAULT_CONFIG["seeds"])

    def test_override_merge_is_deep(self):
        cfg = ExperimentConfig.from_dict(
            {"schedule": {"epochs": 7, "decay_stages": [5]}}
        )
        assert cfg.schedule.epochs == 7
        assert cfg.schedule.decay_stages == (5,)
        assert cfg.schedule.batch_size == DEFAULT_CONFIG["schedule"]["batch_size"]

    def test_seed_validation(self):
        with pytest.raises(ContractError):
            ExperimentConfig.from_dict({"seeds": []})
        with pytest.raises(ContractError):
            ExperimentConfig.from_dict({"seeds": [1, 1]})

    def test_print_config_round_trips(self, capsys):
        assert main(["print-config"]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["task"]["kind"] == DEFAULT_CONFIG["task"]["kind"]


class TestTrainTeacher:
    def test_writes_model_and_summary(self, tmp_path):
        out = str(tmp_path / "r")
        summary = run_train_teacher(_config(out))
        assert os.path.exists(summary["file"])
        assert os.path.exists(os.path.join(out, "teacher_summary.json"))
        assert 0.0 <= summary["test_accuracy"] <= 1.0

    def test_rerun_is_byte_identical(self, tmp_path):
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        run_train_teacher(_config(out1))
        run_train_teacher(_config(out2))
        a = open(os.path.join(out1, "teacher.model"), "rb").read()
        b = open(os.path.join(out2, "teacher.model"), "rb").read()
        assert a == b

    def test_summary_accuracy_matches_saved_model(self, tmp_path):
        out = str(tmp_path / "r")
        cfg = _config(out)
        summary = run_train_teacher(cfg)
        from kdlab.models import load_model
        from kdlab.training import evaluate_accuracy

        model = load_model(summary["file"])
        _, test = cfg.datasets()
        assert evaluate_accuracy(model, test) == summary["test_accuracy"]


class TestDistill:
    def test_artifacts_and_aggregate(self, tmp_path):
        out = str(tmp_path / "r")
        cfg = _config(out)
        run_train_teacher(cfg)
        summary = run_distill(cfg, "kd")
        assert len(summary["sessions"]) == 2
        for sess in summary["sessions"]:
            csv_path = os.path.join(out, sess["trajectory_csv"])
            records = parse_csv(open(csv_path).read())
            assert len(records) == FAST["schedule"]["epochs"]
        finals = [s["final_accuracy"] for s in summary["sessions"]]
        assert abs(summary["aggregate"]["final"]["mean"] - sum(finals) / len(finals)) < 1e-12

    def test_deterministic_artifacts(self, tmp_path):
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        for out in (out1, out2):
            cfg = _config(out)
            run_train_teacher(cfg)
            run_distill(cfg, "slkd")
        csv1 = open(os.path.join(out1, "trajectory_slkd_seed1.csv")).read()
        csv2 = open(os.path.join(out2, "trajectory_slkd_seed1.csv")).read()
        assert csv1 == csv2
        s1 = json.load(open(os.path.join(out1, "summary_slkd.json")))
        s2 = json.load(open(os.path.join(out2, "summary_slkd.json")))
        for a, b in zip(s1["sessions"], s2["sessions"]):
            assert a["final_accuracy"] == b["final_accuracy"]
            assert a["best_accuracy"] == b["best_accuracy"]

    def test_scratch_ignores_missing_teacher(self, tmp_path):
        out = str(tmp_path / "r")
        summary = run_distill(_config(out), "scratch")
        assert len(summary["sessions"]) == 2

    def test_missing_teacher_file_is_io_error(self, tmp_path, fast_config):
        config_path, _ = fast_config
        code = main(["distill", "--mode", "kd", "--config", config_path])
        assert code == EXIT_IO

    def test_unknown_mode_is_usage_error(self, fast_config):
        config_path, _ = fast_config
        with pytest.raises(SystemExit) as exc:
            main(["distill", "--mode", "bogus", "--config", config_path])
        assert exc.value.code == 2


class TestCompare:
    def test_table_shape_and_gain_consistency(self, tmp_path):
        out = str(tmp_path / "r")
        cfg = _config(out)
        doc = run_compare(cfg, ["scratch", "kd"])
        assert len(doc["cells"]) == 2
        by_mode = {c["mode"]: c["final"]["mean"] for c in doc["cells"]}
        gain = doc["gains"][0]
        assert abs(gain["final_mean_gain"] - (by_mode["kd"] - by_mode["scratch"])) < 1e-12
        assert os.path.exists(doc["table_csv"])
        assert os.path.exists(doc["gains_csv"])

    def test_mode_compared_with_itself_has_zero_gain(self, tmp_path):
        out = str(tmp_path / "r")
        doc = run_compare(_config(out), ["kd", "kd"])
        assert doc["gains"][0]["final_mean_gain"] == 0.0

    def test_single_mode_single_teacher_rejected(self, tmp_path):
        with pytest.raises(ContractError):
            run_compare(_config(str(tmp_path / "r")), ["kd"])

    def test_teacher_sweep_row_count(self, tmp_path):
        doc_dict = dict(FAST)
        doc_dict["out"] = str(tmp_path / "r")
        doc_dict["teacher_sweep"] = [[6], [10]]
        cfg = ExperimentConfig.from_dict(doc_dict)
        doc = run_compare(cfg, ["kd", "slkd"])
        assert len(doc["cells"]) == 4  # |modes| x |teacher specs|


class TestGradcheckCommand:
    def test_stock_build_passes(self, tmp_path, capsys):
        code = main(["gradcheck", "--out", str(tmp_path), "--check-seeds", "3"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "all passed" in out
        doc = json.load(open(os.path.join(str(tmp_path), "gradcheck.json")))
        assert doc["all_passed"] is True
        assert all("max_rel_err" in row for row in doc["checks"])

    def test_corrupted_gradient_fails_with_numeric_exit(self, tmp_path):
        code = main(
            ["gradcheck", "--out", str(tmp_path), "--check-seeds", "2", "--corrupt"]
        )
        assert code == EXIT_NUMERIC

    def test_report_lists_max_rel_error_per_op(self, tmp_path, capsys):
        main(["gradcheck", "--out", str(tmp_path), "--check-seeds", "2"])
        lines = [l for l in capsys.readouterr().out.splitlines() if "max_rel_err" in l]
        assert len(lines) >= 10


class TestExitCodes:
    def test_contract_error_exit(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"seeds": [1, 1]}))
        assert main(["distill", "--mode", "kd", "--config", str(bad)]) == EXIT_CONTRACT

    def test_bad_json_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["print-config", "--config", str(bad)]) == EXIT_CONTRACT

    def test_cli_end_to_end_via_main(self, tmp_path):
        config = dict(FAST)
        config["out"] = str(tmp_path / "runs")
        path = tmp_path / "c.json"
        path.write_text(json.dumps(config))
        assert main(["train-teacher", "--config", str(path)]) == EXIT_OK
        assert main(["distill", "--mode", "kd", "--config", str(path)]) == EXIT_OK
        assert main(["distill", "--mode", "slkd", "--config", str(path),
                     "--seeds", "3"]) == EXIT_OK
        assert os.path.exists(os.path.join(config["out"], "trajectory_slkd_seed3.csv"))
