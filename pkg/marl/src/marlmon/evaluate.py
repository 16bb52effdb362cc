"""Evaluation rollouts: trained policy vs random actions (over the bridge) and
vs the waypoint-sampling baseline (via the simulator CLI)."""

from __future__ import annotations

import csv
import json
import os
import subprocess
import tempfile

import numpy as np
import torch

from .bridge_client import BridgeClient
from .features import actor_inputs
from .nets import Actor
from .train import TOY_CONFIG, scale_from_hello, write_toy_config


@torch.no_grad()
def policy_episode_batch(client, actor, scale, seeds, T, n, M, deterministic=True):
    """Returns per-env (episode_reward, final metrics dict)."""
    B = len(seeds)
    obs = client.reset(seeds)
    state = actor.initial_state(B, n)
    totals = np.zeros(B)
    metrics = [None] * B
    for _ in range(T):
        ego_all = np.zeros((B, n, 27), dtype=np.float32)
        tok_all = np.zeros((B, n, M, 7), dtype=np.float32)
        mask_all = np.zeros((B, n, M), dtype=bool)
        for b in range(B):
            ego_all[b], tok_all[b], mask_all[b] = actor_inputs(obs[b], scale, M)
        sl, tl, state = actor(
            torch.as_tensor(ego_all.reshape(B * n, -1)),
            torch.as_tensor(tok_all.reshape(B * n, M, -1)),
            torch.as_tensor(mask_all.reshape(B * n, M)),
            state,
            (B, n),
        )
        if deterministic:
            a_speed = sl.argmax(dim=-1)
            a_turn = tl.argmax(dim=-1)
        else:
            ds, dt_ = actor.distributions(sl, tl)
            a_speed, a_turn = ds.sample(), dt_.sample()
        acts = np.stack([a_speed.view(B, n).numpy(), a_turn.view(B, n).numpy()], axis=-1)
        results = client.step([[list(map(int, a)) for a in acts[b]] for b in range(B)])
        for b, res in enumerate(results):
            totals[b] += res["reward"]
            if res["done"]:
                metrics[b] = res["info"].get("metrics", {})
        obs = [res["obs"] for res in results]
    return totals, metrics


@torch.no_grad()
def random_episode_batch(client, seeds, T, n, rng):
    B = len(seeds)
    client.reset(seeds)
    totals = np.zeros(B)
    metrics = [None] * B
    for _ in range(T):
        acts = [[[int(rng.integers(0, 3)), int(rng.integers(0, 3))] for _ in range(n)] for _ in range(B)]
        results = client.step(acts)
        for b, res in enumerate(results):
            totals[b] += res["reward"]
            if res["done"]:
                metrics[b] = res["info"].get("metrics", {})
    return totals, metrics


def ws_baseline_metrics(episodes: int, out_dir: str | None = None, command="monitorsim"):
    """Mean tracking error of the waypoint-sampling planner on the toy map."""
    tmp = out_dir or tempfile.mkdtemp(prefix="ws_baseline_")
    cfg_path = write_toy_config(os.path.join(tmp, "toy_config.json"))
    run_dir = os.path.join(tmp, "ws")
    subprocess.run(
        [command, "simulate", "--config", cfg_path, "--planner", "ws", "--task", "tracking",
         "--episodes", str(episodes), "--out-dir", run_dir],
        check=True,
        stdout=subprocess.DEVNULL,
    )
    with open(os.path.join(run_dir, "episodes.csv")) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["metric"]) for r in rows])


def evaluate_checkpoint(ckpt_path, episodes=20, seed0=5000, batch=4):
    """Policy vs random over the bridge; returns dict of arrays."""
    from .train import load_checkpoint

    actor, _, ckpt = load_checkpoint(ckpt_path)
    cfg = ckpt.get("config", TOY_CONFIG)
    T = cfg["horizon"]
    n = cfg["robots"]["n_robots"]
    M = cfg["crowd"]["n_humans"]
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = os.path.join(tmp, "toy_config.json")
        with open(cfg_path, "w") as fh:
            json.dump(cfg, fh)
        rng = np.random.default_rng(1)
        pol_r, pol_m, rnd_r, rnd_m = [], [], [], []
        with BridgeClient(cfg_path) as client:
            scale = scale_from_hello(client.hello())
            seeds = [seed0 + e for e in range(episodes)]
            for s0 in range(0, episodes, batch):
                chunk = seeds[s0 : s0 + batch]
                r, m = policy_episode_batch(client, actor, scale, chunk, T, n, M)
                pol_r.extend(r)
                pol_m.extend(mm["tracking"] for mm in m)
                r, m = random_episode_batch(client, chunk, T, n, rng)
                rnd_r.extend(r)
                rnd_m.extend(mm["tracking"] for mm in m)
    return {
        "policy_reward": np.asarray(pol_r),
        "policy_tracking": np.asarray(pol_m),
        "random_reward": np.asarray(rnd_r),
        "random_tracking": np.asarray(rnd_m),
    }
