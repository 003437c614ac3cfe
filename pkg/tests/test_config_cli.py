"""Configuration files, presets, and the command-line interface."""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from flockrl.cli import main
from flockrl.config import (
    ConfigError, DEFAULTS, PRESETS, build_train_config, config_as_dict,
    default_values, parse_config_file, parse_value, write_config_file,
)


class TestConfigParsing:
    def test_round_trip_defaults(self):
        cfg = build_train_config({})
        d = config_as_dict(cfg)
        assert d["n_vehicles"] == 3
        assert d["v_max"] == 0.15
        assert d["r_n"] == 0.15 and d["r_o"] == 0.25
        assert d["r_n_prime"] == 0.1 and d["r_o_prime"] == 0.15
        assert d["dt"] == 0.1 and d["waypoint_speed"] == 0.1
        assert d["episodes"] == 5000
        cfg2 = build_train_config(d)
        assert cfg2 == cfg

    def test_file_parsing(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "# scenario\n"
            "n_vehicles = 5   # five of them\n"
            "episodes=12\n"
            "gamma = 0.9\n"
            "update_cadence = per-vehicle\n"
            "reward_log = true\n"
        )
        values = parse_config_file(p)
        assert values == {"n_vehicles": 5, "episodes": 12, "gamma": 0.9,
                          "update_cadence": "per-vehicle", "reward_log": True}

    def test_missing_file_names_path(self, tmp_path):
        missing = tmp_path / "nope.cfg"
        with pytest.raises(ConfigError, match="nope.cfg"):
            parse_config_file(missing)

    def test_unknown_key_named(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("vehicles = 3\n")
        with pytest.raises(ConfigError, match="vehicles"):
            parse_config_file(p)

    def test_malformed_value_named_not_defaulted(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("episodes = soon\n")
        with pytest.raises(ConfigError, match="episodes"):
            parse_config_file(p)

    def test_duplicate_key_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed = 1\nseed = 2\n")
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_file(p)

    def test_bad_cadence_named(self):
        with pytest.raises(ConfigError, match="update_cadence"):
            parse_value("update_cadence", "hourly")

    def test_bool_int_not_confused(self):
        with pytest.raises(ConfigError):
            parse_value("n_vehicles", True)

    def test_scenario_invariants_surface_as_config_errors(self):
        with pytest.raises(ValueError):
            build_train_config({"r_n_prime": 0.2, "r_n": 0.15})

    def test_presets(self):
        assert PRESETS["table2-row1"] == {"n_vehicles": 3, "n_obstacles": 1}
        assert PRESETS["table2-row2"] == {"n_vehicles": 5, "n_obstacles": 1}
        assert PRESETS["table2-row3"] == {"n_vehicles": 5, "n_obstacles": 2}

    def test_write_config_file_round_trip(self, tmp_path):
        values = default_values()
        values["n_vehicles"] = 5
        p = tmp_path / "snap.cfg"
        write_config_file(p, values)
        back = parse_config_file(p)
        assert back["n_vehicles"] == 5
        assert back["omega_max"] == pytest.approx(math.pi)

    def test_every_default_documented(self):
        for key, (default, parser, text) in DEFAULTS.items():
            assert text, f"{key} lacks help text"


def run_cli(*argv) -> int:
    return main(list(argv))


@pytest.fixture
def tiny_cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(
        "episodes = 2\n"
        "episode_length = 4\n"
        "warmup = 10\n"
        "batch_size = 4\n"
        "buffer_capacity = 200\n"
        "checkpoint_period = 0\n"
        "seed = 5\n"
    )
    return p


class TestCliTrain:
    def test_missing_config_exits_nonzero_naming_path(self, tmp_path, capsys):
        rc = run_cli("train", "--config", str(tmp_path / "absent.cfg"),
                     "--out-dir", str(tmp_path / "out"))
        assert rc == 2
        assert "absent.cfg" in capsys.readouterr().err

    def test_single_episode_override(self, tiny_cfg_file, tmp_path):
        out = tmp_path / "run1"
        rc = run_cli("train", "--config", str(tiny_cfg_file),
                     "--episodes", "1", "--out-dir", str(out))
        assert rc == 0
        with open(out / "metrics.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["episodes"] == 1
        assert manifest["seed"] == 5
        assert manifest["finished_at"] is not None
        assert (out / "checkpoints" / "checkpoint_final.bin").is_file()

    def test_preset_recorded_in_manifest(self, tiny_cfg_file, tmp_path):
        out = tmp_path / "run2"
        rc = run_cli("train", "--config", str(tiny_cfg_file),
                     "--preset", "table2-row1", "--episodes", "1",
                     "--out-dir", str(out))
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["n_vehicles"] == 3
        assert manifest["config"]["n_obstacles"] == 1

    def test_set_overrides(self, tiny_cfg_file, tmp_path):
        out = tmp_path / "run3"
        rc = run_cli("train", "--config", str(tiny_cfg_file),
                     "--set", "n_vehicles=2", "--episodes", "1",
                     "--out-dir", str(out))
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["n_vehicles"] == 2

    def test_bad_set_key_fails(self, tiny_cfg_file, tmp_path, capsys):
        rc = run_cli("train", "--config", str(tiny_cfg_file),
                     "--set", "vehicles=2", "--out-dir", str(tmp_path / "x"))
        assert rc == 2
        assert "vehicles" in capsys.readouterr().err

    def test_out_root_env(self, tiny_cfg_file, tmp_path, monkeypatch):
        monkeypatch.setenv("FLOCKRL_OUT_ROOT", str(tmp_path / "root"))
        rc = run_cli("train", "--config", str(tiny_cfg_file),
                     "--episodes", "1")
        assert rc == 0
        runs = list((tmp_path / "root").iterdir())
        assert len(runs) == 1
        assert (runs[0] / "manifest.json").is_file()


@pytest.fixture
def trained_run(tiny_cfg_file, tmp_path):
    out = tmp_path / "trained"
    rc = run_cli("train", "--config", str(tiny_cfg_file),
                 "--out-dir", str(out))
    assert rc == 0
    return out


class TestCliEvaluate:
    def test_summary_metrics_and_json(self, trained_run, tmp_path, capsys):
        ckpt = trained_run / "checkpoints" / "checkpoint_final.bin"
        summary_path = tmp_path / "summary.json"
        rc = run_cli("evaluate", "--checkpoint", str(ckpt),
                     "--episodes", "3", "--seed", "2",
                     "--out", str(summary_path))
        assert rc == 0
        text = capsys.readouterr().out
        for label in ("tracking error", "min separation to obstacles",
                      "min separation to neighbors",
                      "mean separation to neighbors",
                      "collision-step fraction"):
            assert label in text
        summary = json.loads(summary_path.read_text())
        for key in ("mean_tracking_error", "min_separation_obstacle",
                    "min_separation_neighbor", "mean_separation_neighbor",
                    "collision_step_fraction"):
            assert key in summary

    def test_byte_identical_summaries(self, trained_run, tmp_path):
        ckpt = trained_run / "checkpoints" / "checkpoint_final.bin"
        p1, p2 = tmp_path / "s1.json", tmp_path / "s2.json"
        for p in (p1, p2):
            rc = run_cli("evaluate", "--checkpoint", str(ckpt),
                         "--episodes", "3", "--seed", "2", "--out", str(p))
            assert rc == 0
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_checkpoint_cites_format(self, tmp_path, capsys):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"\x00" * 64)
        rc = run_cli("evaluate", "--checkpoint", str(bad), "--episodes", "1")
        assert rc == 2
        assert "format-version" in capsys.readouterr().err

    def test_writes_summary_next_to_run(self, trained_run):
        ckpt = trained_run / "checkpoints" / "checkpoint_final.bin"
        rc = run_cli("evaluate", "--checkpoint", str(ckpt), "--episodes", "2")
        assert rc == 0
        assert (trained_run / "eval_summary.json").is_file()


class TestCliScalingReport:
    def test_report_over_run_dirs(self, tiny_cfg_file, tmp_path, capsys):
        dirs = []
        for name, preset in (("a", "table2-row1"), ("b", "table2-row3")):
            out = tmp_path / name
            assert run_cli("train", "--config", str(tiny_cfg_file),
                           "--preset", preset, "--out-dir", str(out)) == 0
            ckpt = out / "checkpoints" / "checkpoint_final.bin"
            assert run_cli("evaluate", "--checkpoint", str(ckpt),
                           "--episodes", "2") == 0
            dirs.append(out)
        report = tmp_path / "scaling.csv"
        rc = run_cli("scaling-report", "--run-dir", str(dirs[0]),
                     "--run-dir", str(dirs[1]), "--out", str(report))
        assert rc == 0
        with open(report, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert rows[0]["vehicles"] == "3" and rows[1]["vehicles"] == "5"
        # timing column recomputable from the raw CSV to 1e-9
        for row, d in zip(rows, dirs):
            with open(d / "timing.csv", newline="") as fh:
                times = [float(r["wall_time_ms"]) for r in csv.DictReader(fh)]
            assert abs(float(row["mean_ms_per_episode"])
                       - sum(times) / len(times)) < 1e-9

    def test_missing_eval_summary_is_actionable(self, tiny_cfg_file, tmp_path,
                                                capsys):
        out = tmp_path / "noeval"
        assert run_cli("train", "--config", str(tiny_cfg_file),
                       "--out-dir", str(out)) == 0
        rc = run_cli("scaling-report", "--run-dir", str(out))
        assert rc == 2
        assert "eval_summary.json" in capsys.readouterr().err


class TestManifestReproducibility:
    def test_run_rebuildable_from_manifest_alone(self, tiny_cfg_file, tmp_path):
        out = tmp_path / "orig"
        assert run_cli("train", "--config", str(tiny_cfg_file),
                       "--out-dir", str(out)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        from flockrl.trainer import run_training
        cfg = build_train_config(manifest["config"])
        redo = tmp_path / "redo"
        run_training(cfg, out_dir=redo)
        assert ((out / "metrics.csv").read_bytes()
                == (redo / "metrics.csv").read_bytes())
        assert ((out / "checkpoints" / "checkpoint_final.bin").read_bytes()
                == (redo / "checkpoints" / "checkpoint_final.bin").read_bytes())


class TestCliExportTrajectory:
    def test_export(self, trained_run, tmp_path):
        ckpt = trained_run / "checkpoints" / "checkpoint_final.bin"
        out = tmp_path / "paths.csv"
        rc = run_cli("export-trajectory", "--checkpoint", str(ckpt),
                     "--episodes", "2", "--seed", "3", "--out", str(out))
        assert rc == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["episode", "step", "entity_type", "entity_id",
                           "x", "y", "heading"]
        # 2 episodes x 5 states x (3 vehicles + 1 obstacle + waypoint)
        assert len(rows) - 1 == 2 * 5 * 5
