import io
import json

import numpy as np
import pytest

from monitorsim.bridge import BridgeEnvPool, obs_to_json, serve_stdio
from monitorsim.config import RunConfig
from monitorsim.crowd import synthesize_crowd
from monitorsim.env import ActionCommand, MonitorEnv
from monitorsim.eval import cameras_for, prepare_scenario

from conftest import tiny_cfg


@pytest.fixture(scope="module")
def pool():
    return BridgeEnvPool(tiny_cfg(horizon=30), training_mode=True)


def test_hello_describes_env(pool):
    d = pool.describe()
    assert d["type"] == "config"
    assert d["n_robots"] == 3 and d["n_humans"] == 6
    assert d["horizon"] == 30


def test_reset_distinct_seeds(pool):
    resp = pool.handle({"type": "reset", "envs": [{"seed": 1}, {"seed": 2}]})
    assert resp["type"] == "obs"
    assert [e["env_id"] for e in resp["envs"]] == [0, 1]
    o0 = resp["envs"][0]["obs"]
    o1 = resp["envs"][1]["obs"]
    assert len(o0) == 3
    assert o0[0]["ego"]["p"] != o1[0]["ego"]["p"]  # different spawn seeds
    assert len(o0[0]["ego"]["lidar"]) == 16
    assert len(o0[0]["peers"]) == 2


def test_step_batch_and_info(pool):
    pool.handle({"type": "reset", "envs": [{"seed": 1}, {"seed": 2}]})
    resp = pool.handle(
        {
            "type": "step",
            "envs": [
                {"env_id": 0, "actions": [[2, 1], [1, 0], [0, 2]]},
                {"env_id": 1, "actions": [[0, 1], [0, 1], [0, 1]]},
            ],
        }
    )
    assert resp["type"] == "result"
    for e in resp["envs"]:
        assert "error" not in e
        assert e["done"] is False
        info = e["info"]
        assert len(info["human_states"]) == 6
        assert len(info["visibility"]) == 3 and len(info["visibility"][0]) == 6
        vis_union = {j for row in info["visibility"] for j, flag in enumerate(row) if flag}
        assert vis_union == set(info["union_visible"])


def test_step_wrong_action_count_names_env(pool):
    pool.handle({"type": "reset", "envs": [{"seed": 5}]})
    resp = pool.handle({"type": "step", "envs": [{"env_id": 0, "actions": [[0, 0]]}]})
    err = resp["envs"][0]["error"]
    assert "env 0" in err and "3 actions" in err


def test_unknown_env_and_bad_encoding(pool):
    pool.handle({"type": "reset", "envs": [{"seed": 5}]})
    resp = pool.handle({"type": "step", "envs": [{"env_id": 9, "actions": []}]})
    assert "unknown env_id" in resp["envs"][0]["error"]
    resp = pool.handle({"type": "step", "envs": [{"env_id": 0, "actions": [[7, 0], [0, 0], [0, 0]]}]})
    assert "bad action" in resp["envs"][0]["error"]


def test_malformed_line_keeps_session(pool):
    out = pool.handle_line("{not json")
    assert json.loads(out)["type"] == "error"
    out = pool.handle_line(json.dumps({"type": "bogus"}))
    assert json.loads(out)["type"] == "error"
    out = pool.handle_line(json.dumps({"type": "reset", "envs": [{"seed": 3}]}))
    assert json.loads(out)["type"] == "obs"


def test_bridge_matches_inprocess_env():
    """Driving the bridge reproduces an in-process env bit for bit."""
    cfg = tiny_cfg(horizon=20)
    pool = BridgeEnvPool(cfg, training_mode=True)
    resp = pool.handle({"type": "reset", "envs": [{"seed": 11}]})

    world, rcfg = prepare_scenario(cfg)
    plans = synthesize_crowd(world, rcfg.crowd, rcfg.horizon, rcfg.dt_s, 11)
    env = MonitorEnv(world, plans, rcfg, cameras_for(rcfg, world))
    obs = env.reset(11)
    assert resp["envs"][0]["obs"] == [obs_to_json(o) for o in obs]

    rng = np.random.default_rng(0)
    for t in range(rcfg.horizon):
        acts = [[int(rng.integers(0, 3)), int(rng.integers(0, 3))] for _ in range(rcfg.robots.n_robots)]
        bridge_res = pool.handle({"type": "step", "envs": [{"env_id": 0, "actions": acts}]})
        env_res = env.step([ActionCommand.from_indices(a, b) for a, b in acts])
        e = bridge_res["envs"][0]
        assert e["reward"] == env_res.reward
        assert e["done"] == env_res.done
    assert e["done"]
    assert "metrics" in e["info"]
    assert set(e["info"]["metrics"]) == {"tracking", "occupancy", "flow"}


def test_step_after_done_is_protocol_level_error(pool):
    cfg = tiny_cfg(horizon=2)
    p = BridgeEnvPool(cfg, training_mode=False)
    p.handle({"type": "reset", "envs": [{"seed": 1}]})
    acts = [[0, 0]] * cfg.robots.n_robots
    p.handle({"type": "step", "envs": [{"env_id": 0, "actions": acts}]})
    r = p.handle({"type": "step", "envs": [{"env_id": 0, "actions": acts}]})
    assert r["envs"][0]["done"]
    r = p.handle({"type": "step", "envs": [{"env_id": 0, "actions": acts}]})
    assert "finished" in r["envs"][0]["error"]


def test_deployment_info_hides_ground_truth():
    cfg = tiny_cfg(horizon=5)
    p = BridgeEnvPool(cfg, training_mode=False)
    p.handle({"type": "reset", "envs": [{"seed": 1}]})
    r = p.handle({"type": "step", "envs": [{"env_id": 0, "actions": [[0, 0]] * 3}]})
    info = r["envs"][0]["info"]
    assert "human_states" not in info and "visibility" not in info


def test_serve_stdio_roundtrip():
    cfg = tiny_cfg(horizon=3)
    lines = [
        json.dumps({"type": "hello"}),
        json.dumps({"type": "reset", "envs": [{"seed": 1}, {"seed": 2}]}),
        json.dumps({"type": "step", "envs": [{"env_id": 0, "actions": [[0, 0]] * 3}]}),
        "",
        "garbage",
    ]
    stdin = io.StringIO("\n".join(lines) + "\n")
    stdout = io.StringIO()
    serve_stdio(cfg, training_mode=True, stdin=stdin, stdout=stdout)
    out = [json.loads(l) for l in stdout.getvalue().splitlines()]
    assert [o["type"] for o in out] == ["config", "obs", "result", "error"]
