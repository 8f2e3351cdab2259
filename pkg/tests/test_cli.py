import json
import os

import pytest

from controlroom import cli
from controlroom.config import (
    default_config,
    load_config,
    scenario_from_dict,
    scenario_to_dict,
    validate_config,
)
from controlroom.errors import ConfigError
from controlroom.plantsim import default_scenario


class TestConfigSurface:
    def test_scenario_round_trip_exact_keys(self):
        cfg = default_scenario("s3")
        payload = scenario_to_dict(cfg)
        assert {"scenario_id", "duration_s", "dt_s", "fault_schedule",
                "alarm_thresholds", "consequence_limits"} <= set(payload)
        back = scenario_from_dict(payload)
        assert back.scenario_id == "s3"
        assert back.duration_s == cfg.duration_s
        assert back.fault_schedule.onset_times == cfg.fault_schedule.onset_times

    def test_unknown_scenario_key_rejected(self):
        payload = scenario_to_dict(default_scenario("s1"))
        payload["typo_key"] = 1
        with pytest.raises(ConfigError):
            scenario_from_dict(payload)

    def test_default_config_valid(self):
        assert validate_config(default_config()) == []

    def test_bad_mix_detected(self):
        cfg = default_config()
        cfg["profile_mix"] = {"compliant": 0.9}
        issues = validate_config(cfg)
        assert any("profile_mix" in i for i in issues)

    def test_user_overlay(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"predict": {"tau": 0.9}}))
        cfg = load_config(path)
        assert cfg["predict"]["tau"] == 0.9
        assert cfg["predict"]["k"] == 5  # default preserved


class TestSimulate:
    def test_deterministic_outputs(self, tmp_path):
        args = ["simulate", "--scenario", "s1", "--group", "GroupAI",
                "--profile", "compliant", "--seed", "7"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli.main(args + ["--out", str(out1)]) == 0
        assert cli.main(args + ["--out", str(out2)]) == 0
        assert (out1 / "P01.csv").read_bytes() == (out2 / "P01.csv").read_bytes()
        s1 = json.loads((out1 / "summary.json").read_text())
        s2 = json.loads((out2 / "summary.json").read_text())
        assert s1 == s2
        assert s1["consequence"] == "safe_state"
        assert s1["recovery_status"] in ("optimal", "good")
        manifest = json.loads((out1 / "manifest.json").read_text())
        assert manifest["parameters"]["seed"] == 7
        assert (out1 / "episode_timeline.png").exists()

    def test_s3_null_operator_summary(self, tmp_path):
        out = tmp_path / "run"
        rc = cli.main(["simulate", "--scenario", "s3", "--group", "GroupN",
                       "--profile", "none", "--seed", "1", "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["consequence"] in ("reactor_overheating", "plant_shutdown")
        assert summary["failed"] is True

    def test_bad_scenario_exit_2(self, capsys, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate", "--scenario", "s9", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_unknown_flag_exit_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate", "--scenario", "s1", "--bogus-flag", "1",
                      "--out", str(tmp_path)])
        assert exc.value.code == 2


class TestGenCohort:
    def test_outputs_and_mix(self, small_cohort):
        episodes = sorted(os.listdir(small_cohort / "episodes"))
        assert len(episodes) == 12
        labels = (small_cohort / "labels.csv").read_text().splitlines()
        assert labels[0].startswith("participant_id,failed")
        n_failed = sum(int(line.split(",")[1]) for line in labels[1:])
        # 50/50 mix, stratified: exactly half fail on s3
        assert n_failed == 6
        manifest = json.loads((small_cohort / "manifest.json").read_text())
        assert len(manifest["parameters"]["profiles"]) == 12

    def test_single_episode(self, tmp_path):
        out = tmp_path / "one"
        assert cli.main(["gen-cohort", "--n", "1", "--scenario", "s1",
                         "--seed", "0", "--out", str(out)]) == 0
        assert len(os.listdir(out / "episodes")) == 1

    def test_bad_mix_exit_2(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"profile_mix": {"compliant": 0.7,
                                                        "none": 0.7}}))
        rc = cli.main(["gen-cohort", "--n", "2", "--config", str(cfg_path),
                       "--out", str(tmp_path / "o")])
        assert rc == 2


class TestValidateConfig:
    def test_emit_default_and_validate(self, tmp_path):
        path = tmp_path / "default.json"
        assert cli.main(["validate-config", "--emit-default", str(path)]) == 0
        assert cli.main(["validate-config", "--config", str(path)]) == 0

    def test_invalid_config_exit_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({
            "scenarios": {"s1": {"scenario_id": "s1", "dt_s": -1}},
        }))
        assert cli.main(["validate-config", "--config", str(path)]) == 2


class TestServe:
    def test_serve_without_models_exit_2(self, tmp_path):
        rc = cli.main(["serve", "--scenario", "s1", "--port", "59999",
                       "--out", str(tmp_path)])
        assert rc == 2


class TestTrainDrlSmoke:
    def test_small_budget_writes_outputs(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "training": {"budget": 120, "hidden_sizes": [8, 8]},
        }))
        out = tmp_path / "agents"
        rc = cli.main(["train-drl", "--abnormality", "pic_failure",
                       "--config", str(cfg_path), "--seed", "0",
                       "--out", str(out)])
        assert rc == 0
        assert (out / "agent_pic_failure.npz").exists()
        assert (out / "learning_curve_pic_failure.csv").exists()
        report = json.loads((out / "training_report.json").read_text())
        assert report["pic_failure"]["steps"] == 120


class TestHmmPipeline:
    def test_train_predict_analyze(self, small_cohort, tmp_path):
        model_out = tmp_path / "hmm"
        rc = cli.main(["train-hmm", "--data", str(small_cohort),
                       "--seed", "5", "--out", str(model_out)])
        assert rc == 0
        report = json.loads((model_out / "training_report.json").read_text())
        assert report["failure_state"] is not None
        assert (model_out / "hmm_model.npz").exists()

        pred_out = tmp_path / "pred"
        rc = cli.main(["predict", "--data", str(small_cohort),
                       "--model", str(model_out / "hmm_model.npz"),
                       "--out", str(pred_out), "--figures", "2"])
        assert rc == 0
        pred = json.loads((pred_out / "prediction_report.json").read_text())
        assert pred["accuracy"] >= 0.9
        assert pred["median_lead_time"] > 0

        an_out = tmp_path / "analysis"
        rc = cli.main(["analyze", "--data", str(small_cohort),
                       "--out", str(an_out)])
        assert rc == 0
        for name in ("aggregated.csv", "correlation_edges.csv",
                     "factor_report.json", "comparison.json",
                     "factor_scree.png", "correlation_heatmap.png",
                     "manifest.json"):
            assert (an_out / name).exists(), name
        factor = json.loads((an_out / "factor_report.json").read_text())
        assert factor["elbow"] >= 1
