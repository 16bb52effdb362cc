"""Policy bridge: lets an external process drive batches of environments.

Wire format: one JSON object per line.

  {"type": "hello"}
      -> {"type": "config", "config": {...}, "n_robots": N, "n_humans": M, ...}
  {"type": "reset", "envs": [{"seed": 1, "config_ref": "default"}, ...]}
      -> {"type": "obs", "envs": [{"env_id": 0, "obs": [obs...]}, ...]}
  {"type": "step", "envs": [{"env_id": 0, "actions": [[v_idx, d_idx], ...]}]}
      -> {"type": "result", "envs": [{"env_id", "obs", "reward", "done", "info"}]}

Action indices map to {0,1,2} m/s and {-pi/8, 0, +pi/8} rad/s. Malformed
messages produce {"type": "error", "message", "env_id"?} and keep the
connection alive. In training mode, info carries ground-truth human states and
per-robot one-hot visibility; at episode end it also carries the episode
metrics.
"""

from __future__ import annotations

import json
import socketserver
import sys

import numpy as np

from . import belief as bel
from .config import RunConfig, config_to_dict
from .crowd import synthesize_crowd
from .env import ActionCommand, LocalObservation, MonitorEnv
from .errors import EpisodeFinished, ProtocolError
from .eval import cameras_for, prepare_scenario


def obs_to_json(obs: LocalObservation) -> dict:
    return {
        "ego": {
            "p": [float(obs.ego_p[0]), float(obs.ego_p[1])],
            "theta": float(obs.ego_theta),
            "v": float(obs.ego_v),
            "lidar": [float(d) for d in obs.lidar],
        },
        "peers": [[float(p[0]), float(p[1]), float(th), float(v)] for p, th, v in obs.peers],
        "humans": [
            [float(m.p[0]), float(m.p[1]), float(m.theta), float(m.v)] for m in obs.humans
        ],
    }


class BridgeEnvPool:
    """Environment instances owned by one bridge session."""

    def __init__(self, cfg: RunConfig, training_mode: bool = True):
        self.base_cfg = cfg
        self.training_mode = training_mode
        self.world, self.cfg = prepare_scenario(cfg)
        self.cameras = cameras_for(self.cfg, self.world)
        self.envs = {}
        self._metrics_state = {}

    def describe(self) -> dict:
        return {
            "type": "config",
            "config": config_to_dict(self.cfg),
            "n_robots": self.cfg.robots.n_robots,
            "n_humans": self.cfg.crowd.n_humans,
            "horizon": self.cfg.horizon,
            "map_size_m": [self.world.width_m, self.world.height_m],
            "n_zones": self.world.n_zones(),
            "training_mode": self.training_mode,
        }

    def reset(self, entries) -> dict:
        self.envs = {}
        out = []
        for env_id, entry in enumerate(entries):
            if not isinstance(entry, dict) or "seed" not in entry:
                raise ProtocolError(f"reset entry {env_id} must carry a seed")
            ref = entry.get("config_ref", "default")
            if ref != "default":
                raise ProtocolError(f"unknown config_ref {ref!r} for env {env_id}")
            seed = int(entry["seed"])
            plans = synthesize_crowd(self.world, self.cfg.crowd, self.cfg.horizon, self.cfg.dt_s, seed)
            env = MonitorEnv(self.world, plans, self.cfg, self.cameras)
            obs = env.reset(seed)
            self.envs[env_id] = env
            out.append({"env_id": env_id, "obs": [obs_to_json(o) for o in obs]})
        return {"type": "obs", "envs": out}

    def _info_json(self, env: MonitorEnv, info: dict, done: bool) -> dict:
        if not self.training_mode:
            return {"t": info["t"]}
        n, m = env.n_robots, env.n_humans
        visibility = [[0] * m for _ in range(n)]
        for i, vis in enumerate(info["visible_per_robot"]):
            for j in vis:
                visibility[i][j] = 1
        out = {
            "t": info["t"],
            "human_states": [
                [float(p[0]), float(p[1]), float(th), float(v)] for p, th, v in info["human_states"]
            ],
            "visibility": visibility,
            "union_visible": [int(j) for j in info["union_visible"]],
        }
        if done:
            out["metrics"] = self._final_metrics(env)
        return out

    def _final_metrics(self, env: MonitorEnv) -> dict:
        state = self._metrics_state.get(id(env))
        if state is None:
            return {}
        belief_trace, truth_trace, occ_est, occ_true = state
        return {
            "tracking": bel.tracking_error(np.asarray(belief_trace), np.asarray(truth_trace)),
            "occupancy": bel.occupancy_error(np.asarray(occ_est), np.asarray(occ_true)),
            "flow": bel.flow_error(env.flow_belief.flow, env.true_flow.flow),
        }

    def step(self, entries) -> dict:
        out = []
        for entry in entries:
            if not isinstance(entry, dict) or "env_id" not in entry:
                raise ProtocolError("step entry missing env_id")
            env_id = entry["env_id"]
            env = self.envs.get(env_id)
            if env is None:
                out.append({"env_id": env_id, "error": f"unknown env_id {env_id}"})
                continue
            actions_raw = entry.get("actions")
            if not isinstance(actions_raw, list) or len(actions_raw) != env.n_robots:
                out.append(
                    {
                        "env_id": env_id,
                        "error": f"env {env_id} expects {env.n_robots} actions, got "
                        f"{len(actions_raw) if isinstance(actions_raw, list) else type(actions_raw).__name__}",
                    }
                )
                continue
            try:
                actions = [ActionCommand.from_indices(int(a[0]), int(a[1])) for a in actions_raw]
            except (ValueError, TypeError, IndexError) as exc:
                out.append({"env_id": env_id, "error": f"env {env_id}: bad action encoding: {exc}"})
                continue
            try:
                res = env.step(actions)
            except EpisodeFinished as exc:
                out.append({"env_id": env_id, "error": f"env {env_id}: {exc}"})
                continue
            self._track_metrics(env)
            out.append(
                {
                    "env_id": env_id,
                    "obs": [obs_to_json(o) for o in res.observations],
                    "reward": float(res.reward),
                    "done": bool(res.done),
                    "info": self._info_json(env, res.info, res.done),
                }
            )
        return {"type": "result", "envs": out}

    def _track_metrics(self, env: MonitorEnv):
        state = self._metrics_state.setdefault(id(env), ([], [], [], []))
        belief_trace, truth_trace, occ_est, occ_true = state
        belief_trace.append(env.position_belief.p_hat.copy())
        truth_trace.append(env._human_positions(env.t).copy())
        occ_est.append(env.occupancy_est.copy())
        occ_true.append(bel.true_occupancy(env.world, env._human_positions(env.t)))

    def handle(self, message: dict) -> dict:
        if not isinstance(message, dict) or "type" not in message:
            raise ProtocolError("message must be an object with a 'type' field")
        mtype = message["type"]
        if mtype == "hello":
            return self.describe()
        if mtype == "reset":
            envs = message.get("envs")
            if not isinstance(envs, list) or not envs:
                raise ProtocolError("reset needs a nonempty 'envs' list")
            return self.reset(envs)
        if mtype == "step":
            envs = message.get("envs")
            if not isinstance(envs, list) or not envs:
                raise ProtocolError("step needs a nonempty 'envs' list")
            return self.step(envs)
        raise ProtocolError(f"unknown message type {mtype!r}")

    def handle_line(self, line: str) -> str:
        try:
            try:
                message = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"invalid JSON: {exc}") from exc
            response = self.handle(message)
        except ProtocolError as exc:
            response = {"type": "error", "message": str(exc)}
        return json.dumps(response)


def serve_stdio(cfg: RunConfig, training_mode: bool = True, stdin=None, stdout=None):
    """Serve the protocol over standard streams until EOF."""
    pool = BridgeEnvPool(cfg, training_mode)
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        stdout.write(pool.handle_line(line) + "\n")
        stdout.flush()


def serve_tcp(cfg: RunConfig, host: str, port: int, training_mode: bool = True, ready_callback=None):
    """Serve the protocol over a local TCP socket; one session per connection."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            pool = BridgeEnvPool(cfg, training_mode)
            for raw in self.rfile:
                line = raw.decode().strip()
                if not line:
                    continue
                self.wfile.write((pool.handle_line(line) + "\n").encode())
                self.wfile.flush()

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server((host, port), Handler) as server:
        if ready_callback is not None:
            ready_callback(server.server_address)
        server.serve_forever()
