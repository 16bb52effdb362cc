"""Action server: answers per-step action requests from a checkpointed policy.

Protocol (newline JSON on stdio):
    {"type": "hello"} -> {"type": "policy", "n_robots": N, ...}
    {"type": "reset_state", "n_envs": B} -> {"type": "ok"}
    {"type": "act", "envs": [{"env_id": 0, "obs": [...]}, ...]}
        -> {"type": "actions", "envs": [{"env_id": 0, "actions": [[v, d], ...]}]}

Recurrent state is kept per env between `act` calls and cleared by
`reset_state`. Lets the trained policy stand in as an external planner for
any process that owns the environments.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import torch

from .features import actor_inputs
from .train import TOY_CONFIG, load_checkpoint
from .features import EnvScale


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--deterministic", action="store_true", default=True)
    args = parser.parse_args(argv)
    actor, _, ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.get("config", TOY_CONFIG)
    n = cfg["robots"]["n_robots"]
    M = cfg["crowd"]["n_humans"]
    scale = EnvScale(cfg["map"]["width_m"], cfg["map"]["height_m"])
    state = None

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            print(json.dumps({"type": "error", "message": f"invalid JSON: {exc}"}), flush=True)
            continue
        mtype = msg.get("type")
        if mtype == "hello":
            print(json.dumps({"type": "policy", "n_robots": n, "n_humans": M, "config": cfg}), flush=True)
        elif mtype == "reset_state":
            b = int(msg.get("n_envs", 1))
            state = actor.initial_state(b, n)
            print(json.dumps({"type": "ok"}), flush=True)
        elif mtype == "act":
            envs = msg.get("envs", [])
            b = len(envs)
            if state is None or state[0].shape[0] != b * n:
                state = actor.initial_state(b, n)
            ego_all = np.zeros((b, n, 27), dtype=np.float32)
            tok_all = np.zeros((b, n, M, 7), dtype=np.float32)
            mask_all = np.zeros((b, n, M), dtype=bool)
            for i, entry in enumerate(sorted(envs, key=lambda e: e["env_id"])):
                ego_all[i], tok_all[i], mask_all[i] = actor_inputs(entry["obs"], scale, M)
            with torch.no_grad():
                sl, tl, state = actor(
                    torch.as_tensor(ego_all.reshape(b * n, -1)),
                    torch.as_tensor(tok_all.reshape(b * n, M, -1)),
                    torch.as_tensor(mask_all.reshape(b * n, M)),
                    state,
                    (b, n),
                )
            speeds = sl.argmax(dim=-1).view(b, n).tolist()
            turns = tl.argmax(dim=-1).view(b, n).tolist()
            out = [
                {"env_id": e["env_id"], "actions": [[speeds[i][r], turns[i][r]] for r in range(n)]}
                for i, e in enumerate(sorted(envs, key=lambda e: e["env_id"]))
            ]
            print(json.dumps({"type": "actions", "envs": out}), flush=True)
        else:
            print(json.dumps({"type": "error", "message": f"unknown type {mtype!r}"}), flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
