"""Configuration parsing and command-line pipeline tests."""

import hashlib
import json

import numpy as np
import pytest

from radartrack import checkpoint
from radartrack.cli import _model_from_config, main
from radartrack.config import Config, config_from_dict, load_config
from radartrack.errors import ConfigError
from radartrack.geometry import OrientedBox
from radartrack.sim import (MotionModel, Scenario, ScenarioObject,
                            generate_scenario, save_scenario)

GOLDEN_TRACK_HASHES = {
    (11, "scenario_0000"):
        "ce96ba43359ebdb39f1db612c4aacd2522c1dc45938da8093a91287de028bf07",
    (22, "scenario_0001"):
        "ec9c7501818bc1cc4785c5462e977e48dc2bcfc0dc31831e0ba1091bef693cf4",
    (33, "scenario_0000"):
        "6846e49f0a4726d6665f99d0a0f9ee3315f3fd93081a8f99ce6a56c86eee212f",
}


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path, config):
    path.write_text(json.dumps(config))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated two-scenario set plus a small shared configuration."""
    root = tmp_path_factory.mktemp("cli")
    scenes = root / "scenes"
    config = {
        "data": {"scenarios": str(scenes), "count": 2, "frames": 8,
                 "grid": [32, 32], "objects": 1,
                 "speed_min": 0.5, "speed_max": 1.0},
        "architecture": {"frames": 2, "channels": 8, "pos_dim": 16,
                         "attention_heads": 2},
        "training": {"steps": 3},
        "tracking": {"max_detections": 2},
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config))
    assert main(["generate", "--config", str(config_path), "--seed", "5",
                 "--out", str(scenes)]) == 0
    return root, config_path, config


class TestConfig:
    def test_documented_defaults(self):
        config = Config()
        arch, training, tracking = (config.architecture, config.training,
                                    config.tracking)
        assert arch.top_k == 8
        assert arch.pos_dim == 64
        assert arch.downsample == 4
        assert arch.stages == 1
        assert arch.window_repeats == 2
        assert arch.regroup_repeats == 2
        assert arch.merge == "max"
        assert training.learning_rate == 5e-4
        assert tracking.angle_weight == 0.5
        assert tracking.score_gate == 0.08
        assert tracking.spawn_threshold == 0.20
        assert config.data.grid == (64, 64)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="sections"):
            config_from_dict({"architecture": {}, "misc": {}})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="topk"):
            config_from_dict({"architecture": {"topk": 9}})

    def test_non_object_section_rejected(self):
        with pytest.raises(ConfigError, match="object"):
            config_from_dict({"training": 7})

    def test_grid_list_becomes_tuple(self):
        config = config_from_dict({"data": {"grid": [32, 48]}})
        assert config.data.grid == (32, 48)

    @pytest.mark.parametrize("raw", [
        {"architecture": {"relation": "dense"}},
        {"architecture": {"merge": "median"}},
        {"architecture": {"downsample": 2}},
        {"training": {"steps": 0}},
        {"training": {"learning_rate": 0.0}},
        {"tracking": {"angle_weight": 1.5}},
        {"tracking": {"association": "greedy"}},
        {"tracking": {"max_detections": 0}},
        {"data": {"grid": [0, 32]}},
        {"data": {"speed_min": 2.0, "speed_max": 1.0}},
    ])
    def test_invalid_values_rejected(self, raw):
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(path)


class TestGenerate:
    def test_writes_the_requested_scenarios(self, workspace):
        root, _, _ = workspace
        for name in ("scenario_0000", "scenario_0001"):
            directory = root / "scenes" / name
            assert (directory / "scenario.json").exists()
            assert (directory / "frames.bin").exists()
            assert (directory / "annotations.jsonl").exists()

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        root, config_path, _ = workspace
        assert main(["generate", "--config", str(config_path), "--seed", "5",
                     "--out", str(tmp_path / "again")]) == 0
        for name in ("scenario_0000", "scenario_0001"):
            for part in ("scenario.json", "frames.bin", "annotations.jsonl"):
                assert (_sha(tmp_path / "again" / name / part)
                        == _sha(root / "scenes" / name / part))

    def test_different_seed_changes_the_set(self, workspace, tmp_path):
        root, config_path, _ = workspace
        assert main(["generate", "--config", str(config_path), "--seed", "6",
                     "--out", str(tmp_path / "other")]) == 0
        assert (_sha(tmp_path / "other" / "scenario_0000" / "frames.bin")
                != _sha(root / "scenes" / "scenario_0000" / "frames.bin"))


class TestTrain:
    def test_writes_losses_and_checkpoint(self, workspace, tmp_path):
        _, config_path, _ = workspace
        out = tmp_path / "run"
        assert main(["train", "--config", str(config_path), "--seed", "5",
                     "--out", str(out)]) == 0
        lines = (out / "loss.csv").read_text().splitlines()
        assert lines[0] == "step,total,heatmap,size,orientation,offset,direction"
        assert len(lines) == 4
        arrays = checkpoint.load_arrays(out / "model.ckpt")
        assert "train.step" in arrays
        assert arrays["train.step"][0] == 3.0
        assert any(name.startswith("opt.m.") for name in arrays)

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        _, config_path, _ = workspace
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["train", "--config", str(config_path), "--seed", "9",
                         "--out", str(out)]) == 0
            outs.append(out)
        assert _sha(outs[0] / "loss.csv") == _sha(outs[1] / "loss.csv")
        assert _sha(outs[0] / "model.ckpt") == _sha(outs[1] / "model.ckpt")

    def test_resume_reproduces_the_interrupted_run(self, workspace, tmp_path):
        root, _, config = workspace
        full = dict(config, training={"steps": 4})
        half = dict(config, training={"steps": 2})
        full_out, half_out, rest_out = (tmp_path / n for n in
                                        ("full", "half", "rest"))
        assert main(["train", "--config", _write(tmp_path / "f.json", full),
                     "--seed", "5", "--out", str(full_out)]) == 0
        assert main(["train", "--config", _write(tmp_path / "h.json", half),
                     "--seed", "5", "--out", str(half_out)]) == 0
        rest = dict(config, training={
            "steps": 2, "resume": str(half_out / "model.ckpt")})
        assert main(["train", "--config", _write(tmp_path / "r.json", rest),
                     "--seed", "5", "--out", str(rest_out)]) == 0
        full_rows = (full_out / "loss.csv").read_text().splitlines()
        rest_rows = (rest_out / "loss.csv").read_text().splitlines()
        assert rest_rows[1:] == full_rows[3:5]
        assert _sha(rest_out / "model.ckpt") == _sha(full_out / "model.ckpt")

    def test_relation_free_ablation_trains(self, workspace, tmp_path):
        _, _, config = workspace
        ablated = dict(config)
        ablated["architecture"] = dict(config["architecture"], stages=0,
                                       window_repeats=0, regroup_repeats=0)
        ablated["training"] = {"steps": 1}
        assert main(["train", "--config", _write(tmp_path / "a.json", ablated),
                     "--seed", "5", "--out", str(tmp_path / "out")]) == 0

    def test_missing_scenarios_is_a_config_error(self, workspace, tmp_path):
        _, _, config = workspace
        broken = dict(config, data=dict(config["data"],
                                        scenarios=str(tmp_path / "void")))
        assert main(["train", "--config", _write(tmp_path / "b.json", broken),
                     "--out", str(tmp_path / "out")]) == 2

    def test_unknown_config_key_is_a_config_error(self, workspace, tmp_path):
        _, _, config = workspace
        broken = dict(config, training={"steps": 1, "stepz": 2})
        assert main(["train", "--config", _write(tmp_path / "b.json", broken),
                     "--out", str(tmp_path / "out")]) == 2


class TestTrack:
    def test_seeded_smoke_runs_match_golden_hashes(self, workspace, tmp_path):
        root, config_path, _ = workspace
        config = load_config(config_path)
        for (init_seed, scenario_name), expected in GOLDEN_TRACK_HASHES.items():
            model = _model_from_config(config, init_seed)
            ckpt = tmp_path / f"init_{init_seed}.ckpt"
            checkpoint.save_params(ckpt, model.params())
            out = tmp_path / f"golden_{init_seed}_{scenario_name}"
            assert main(["track", "--config", str(config_path), "--seed", "0",
                         "--out", str(out), "--checkpoint", str(ckpt),
                         "--scenario", str(root / "scenes" / scenario_name)]) == 0
            assert _sha(out / "tracks.jsonl") == expected

    def test_records_carry_frame_id_and_box_fields(self, workspace, tmp_path):
        root, config_path, _ = workspace
        config = load_config(config_path)
        model = _model_from_config(config, 11)
        ckpt = tmp_path / "init.ckpt"
        checkpoint.save_params(ckpt, model.params())
        out = tmp_path / "run"
        assert main(["track", "--config", str(config_path),
                     "--out", str(out), "--checkpoint", str(ckpt),
                     "--scenario", str(root / "scenes" / "scenario_0000")]) == 0
        records = [json.loads(line) for line in
                   (out / "tracks.jsonl").read_text().splitlines()]
        assert records
        for record in records:
            assert {"frame", "id", "x", "y", "w", "h", "theta",
                    "score"} <= set(record)

    def test_architecture_mismatch_is_a_config_error(self, workspace, tmp_path):
        root, config_path, config = workspace
        wide = dict(config)
        wide["architecture"] = dict(config["architecture"], channels=16)
        model = _model_from_config(config_from_dict(wide), 1)
        ckpt = tmp_path / "wide.ckpt"
        checkpoint.save_params(ckpt, model.params())
        assert main(["track", "--config", str(config_path),
                     "--out", str(tmp_path / "out"), "--checkpoint", str(ckpt),
                     "--scenario", str(root / "scenes" / "scenario_0000")]) == 2

    def test_short_scenario_is_a_config_error(self, workspace, tmp_path):
        root, config_path, config = workspace
        scenario, frames = generate_scenario(
            seed=1, motions=[MotionModel(kind="constant_velocity",
                                         start=(16.0, 16.0), heading=0.0,
                                         speed=0.0, size=(4.0, 2.0))],
            n_frames=1, grid=(32, 32))
        save_scenario(tmp_path / "short", scenario, frames)
        model = _model_from_config(load_config(config_path), 1)
        ckpt = tmp_path / "init.ckpt"
        checkpoint.save_params(ckpt, model.params())
        assert main(["track", "--config", str(config_path),
                     "--out", str(tmp_path / "out"), "--checkpoint", str(ckpt),
                     "--scenario", str(tmp_path / "short")]) == 2


class TestEval:
    def _scenario_dir(self, tmp_path):
        box_rows = {t: OrientedBox(10.0 + 2.0 * t, 16.0, 4.0, 2.0, 0.0)
                    for t in range(5)}
        obj = ScenarioObject(object_id=3, boxes=box_rows)
        scenario = Scenario(objects=(obj,), n_frames=5, grid=(32, 32))
        save_scenario(tmp_path / "gt", scenario, np.zeros((5, 32, 32)))
        return scenario

    def test_perfect_tracks_score_one(self, tmp_path):
        scenario = self._scenario_dir(tmp_path)
        records = [{"frame": t, "id": 9, "x": box.cx, "y": box.cy,
                    "w": box.w, "h": box.h, "theta": box.theta, "score": 0.9}
                   for t, box in scenario.objects[0].boxes.items()]
        pred = tmp_path / "tracks.jsonl"
        pred.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        out = tmp_path / "metrics"
        assert main(["eval", "--gt", str(tmp_path / "gt"), "--pred", str(pred),
                     "--out", str(out), "--name", "linear"]) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0].startswith("sequence,mota,idf1")
        cells = lines[1].split(",")
        assert cells[0] == "linear"
        assert cells[1] == "1.000000"
        assert cells[2] == "1.000000"

    def test_empty_predictions_score_zero_mota(self, tmp_path):
        self._scenario_dir(tmp_path)
        pred = tmp_path / "tracks.jsonl"
        pred.write_text("")
        out = tmp_path / "metrics"
        assert main(["eval", "--gt", str(tmp_path / "gt"), "--pred", str(pred),
                     "--out", str(out)]) == 0
        cells = (out / "metrics.csv").read_text().splitlines()[1].split(",")
        assert cells[1] == "0.000000"

    def test_ground_truth_without_boxes_is_a_config_error(self, tmp_path):
        scenario = Scenario(objects=(), n_frames=2, grid=(32, 32))
        save_scenario(tmp_path / "gt", scenario, np.zeros((2, 32, 32)))
        pred = tmp_path / "tracks.jsonl"
        pred.write_text("")
        assert main(["eval", "--gt", str(tmp_path / "gt"), "--pred", str(pred),
                     "--out", str(tmp_path / "m")]) == 2


class TestComplexity:
    def test_tabulates_both_attention_forms(self, tmp_path):
        out = tmp_path / "cx"
        assert main(["complexity", "--out", str(out)]) == 0
        lines = (out / "complexity.csv").read_text().splitlines()
        assert lines[0] == "frames,top_k,window,patch,stages,full,windowed"
        rows = {}
        for line in lines[1:]:
            cells = line.split(",")
            rows[(int(cells[0]), int(cells[1]))] = (int(cells[5]),
                                                    int(cells[6]))
        assert rows[(2, 8)] == (256, 384)
        assert rows[(4, 8)] == (1024, 1024)
        for frames in (6, 8, 10, 12, 14, 16):
            for top_k in (8, 16):
                full, windowed = rows[(frames, top_k)]
                assert windowed < full

    def test_smaller_patches_win_earlier(self, tmp_path):
        config = {"architecture": {"patch": 4, "slot_stride": 4}}
        out = tmp_path / "cx"
        assert main(["complexity", "--out", str(out),
                     "--config", _write(tmp_path / "c.json", config)]) == 0
        for line in (out / "complexity.csv").read_text().splitlines()[1:]:
            cells = line.split(",")
            if (int(cells[0]), int(cells[1])) == (4, 8):
                assert (int(cells[5]), int(cells[6])) == (1024, 768)
                return
        raise AssertionError("expected a frames=4, top_k=8 row")

    def test_rerun_is_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["complexity", "--out", str(tmp_path / name)]) == 0
        assert (_sha(tmp_path / "a" / "complexity.csv")
                == _sha(tmp_path / "b" / "complexity.csv"))


class TestGradcheckCommand:
    def test_report_lists_every_op_as_passing(self, tmp_path):
        out = tmp_path / "gc"
        assert main(["gradcheck", "--repeats", "1", "--out", str(out)]) == 0
        lines = (out / "gradcheck.csv").read_text().splitlines()
        assert lines[0] == "op,max_error,status"
        assert len(lines) > 20
        for line in lines[1:]:
            name, error, status = line.split(",")
            assert status == "pass"
            assert float(error) < 1e-4
