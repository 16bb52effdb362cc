"""Client for the simulator's policy-bridge protocol over a subprocess' stdio."""

from __future__ import annotations

import json
import subprocess


class BridgeClient:
    """Spawns `monitorsim serve-bridge --stdio` and exchanges newline JSON."""

    def __init__(self, config_path: str | None = None, extra_args=None, command="monitorsim"):
        args = [command, "serve-bridge", "--stdio"]
        if config_path:
            args += ["--config", config_path]
        if extra_args:
            args += list(extra_args)
        self.proc = subprocess.Popen(
            args, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )

    def rpc(self, message: dict) -> dict:
        self.proc.stdin.write(json.dumps(message) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise ConnectionError("bridge closed the stream")
        resp = json.loads(line)
        if resp.get("type") == "error":
            raise RuntimeError(f"bridge error: {resp.get('message')}")
        return resp

    def hello(self) -> dict:
        return self.rpc({"type": "hello"})

    def reset(self, seeds) -> list:
        resp = self.rpc({"type": "reset", "envs": [{"seed": int(s)} for s in seeds]})
        return [e["obs"] for e in sorted(resp["envs"], key=lambda e: e["env_id"])]

    def step(self, actions_per_env) -> list:
        """actions_per_env: list over envs of [[v_idx, d_idx], ...].

        Returns the per-env result dicts in env order; raises on protocol
        errors reported for any environment.
        """
        resp = self.rpc(
            {
                "type": "step",
                "envs": [
                    {"env_id": i, "actions": acts} for i, acts in enumerate(actions_per_env)
                ],
            }
        )
        out = sorted(resp["envs"], key=lambda e: e["env_id"])
        for e in out:
            if "error" in e:
                raise RuntimeError(f"bridge env error: {e['error']}")
        return out

    def close(self):
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=30)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
