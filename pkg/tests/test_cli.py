import csv
import json
import os

import numpy as np
import pytest

from monitorsim.cli import main
from monitorsim.config import RunConfig, config_from_dict, config_to_dict, save_config
from monitorsim.errors import ConfigError


def run(args):
    return main(list(args))


def tiny_config_file(tmp_path, **kw):
    cfg = RunConfig(horizon=kw.pop("horizon", 40), **kw)
    cfg.map.width_m = 40.0
    cfg.map.height_m = 24.0
    cfg.map.n_rooms = 5
    cfg.map_seed = 3
    cfg.crowd.n_humans = 5
    cfg.robots.n_robots = 2
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    return str(path)


def test_gen_map_deterministic(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert run(["gen-map", "--seed", "7", "-o", str(a)]) == 0
    assert run(["gen-map", "--seed", "7", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "manifest.json").exists()


def test_simulate_outputs(tmp_path):
    cfg = tiny_config_file(tmp_path)
    out = tmp_path / "runs"
    assert run(["simulate", "--config", cfg, "--planner", "ws", "--task", "tracking",
                "--episodes", "1", "--seed", "1", "--out-dir", str(out)]) == 0
    with open(out / "episodes.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["planner"] == "ws"
    assert (out / "record_000.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["planner"] == "ws"
    assert manifest["config"]["seed"] == 1


def test_simulate_byte_identical_reruns(tmp_path):
    cfg = tiny_config_file(tmp_path)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    for out in (out1, out2):
        assert run(["simulate", "--config", cfg, "--planner", "mcpp", "--episodes", "1",
                    "--seed", "5", "--out-dir", str(out)]) == 0
    assert (out1 / "episodes.csv").read_bytes() == (out2 / "episodes.csv").read_bytes()
    assert (out1 / "record_000.json").read_bytes() == (out2 / "record_000.json").read_bytes()


def test_sweep_row_count_and_figure(tmp_path):
    cfg = tiny_config_file(tmp_path)
    out = tmp_path / "sweep"
    assert run(["sweep", "--config", cfg, "--robots-list", "1,2", "--planners", "ws,fc",
                "--tasks", "tracking", "--episodes", "1", "--out-dir", str(out)]) == 0
    agg = json.loads((out / "aggregates.json").read_text())["aggregates"]
    assert len(agg) == 4
    assert (out / "sweep_tracking.png").exists()
    with open(out / "episodes.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 4


def test_unknown_config_key_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    data = config_to_dict(RunConfig())
    data["task_typo"] = "tracking"
    path.write_text(json.dumps(data))
    assert run(["simulate", "--config", str(path), "--episodes", "1"]) == 2


def test_bad_nested_key_names_path():
    with pytest.raises(ConfigError, match="crowd.n_humanz"):
        config_from_dict({"crowd": {"n_humanz": 3}})


def test_generation_failure_exits_3(tmp_path):
    # rooms larger than the map cannot be placed
    data = config_to_dict(RunConfig())
    data["map"]["width_m"] = 10.0
    data["map"]["height_m"] = 8.0
    data["map"]["room_min_m"] = 30.0
    data["map"]["room_max_m"] = 40.0
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    assert run(["gen-map", "--config", str(path), "-o", str(tmp_path / "m.json")]) == 3


def test_heatmap_from_records(tmp_path):
    cfg = tiny_config_file(tmp_path)
    out = tmp_path / "sim"
    assert run(["simulate", "--config", cfg, "--planner", "ws", "--episodes", "1",
                "--seed", "2", "--out-dir", str(out)]) == 0
    hm = tmp_path / "hm"
    assert run(["heatmap", "--config", cfg, "--records", str(out), "--out-dir", str(hm)]) == 0
    grid = np.loadtxt(hm / "heatmap_mobile.csv", delimiter=",")
    assert grid.shape == (48, 80)
    assert (hm / "heatmap.png").exists()


def test_correlate_outputs(tmp_path):
    cfg = tiny_config_file(tmp_path)
    out = tmp_path / "corr"
    assert run(["correlate", "--config", cfg, "--planner", "ws", "--episodes", "4",
                "--out-dir", str(out)]) == 0
    stats = json.loads((out / "correlation.json").read_text())
    assert set(stats) == {"r", "slope", "intercept", "n"}
    assert stats["n"] == 4
    assert (out / "pairs.csv").exists()
    assert (out / "correlation.png").exists()


def test_placement_study(tmp_path):
    cfg = tiny_config_file(tmp_path)
    out = tmp_path / "place"
    assert run(["placement", "--config", cfg, "--positions", "3", "--episodes", "1",
                "--out-dir", str(out)]) == 0
    with open(out / "placement.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert (out / "placement.png").exists()
    assert (out / "placement_map.png").exists()


def test_crowd_dump_and_replay(tmp_path):
    cfg = tiny_config_file(tmp_path)
    out1 = tmp_path / "dump"
    crowd_path = tmp_path / "crowd.json"
    assert run(["simulate", "--config", cfg, "--planner", "ws", "--episodes", "1", "--seed", "4",
                "--out-dir", str(out1), "--crowd-out", str(crowd_path)]) == 0
    assert crowd_path.exists()
    out2 = tmp_path / "replay"
    assert run(["simulate", "--config", cfg, "--planner", "ws", "--episodes", "1", "--seed", "4",
                "--out-dir", str(out2), "--crowd-file", str(crowd_path)]) == 0
    # same crowd, same seeds: identical records
    assert (out1 / "record_000.json").read_bytes() == (out2 / "record_000.json").read_bytes()
