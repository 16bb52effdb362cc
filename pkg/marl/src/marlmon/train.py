"""Toy-scale MAPPO training against the simulator bridge.

Usage:
    python -m marlmon.train --out artifacts --iterations 150

Collects one full episode from every parallel environment per iteration,
updates with chunked BPTT, and checkpoints whenever the running mean episode
reward improves. All randomness is seeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import time

import numpy as np
import torch

from .bridge_client import BridgeClient
from .features import EnvScale, actor_inputs, critic_inputs
from .mappo import Hyper, Rollout, compute_gae, mappo_update
from .nets import HIDDEN, Actor, Critic

TOY_CONFIG = {
    "schema_version": 1,
    "map": {"width_m": 32.0, "height_m": 20.0, "n_rooms": 3},
    "map_seed": 1,
    "horizon": 200,
    "task": "tracking",
    "crowd": {"n_humans": 5},
    "robots": {"n_robots": 2},
    "seed": 0,
}

TOY_HYPER = Hyper(epochs=5, minibatches=4, chunk=50)


def write_toy_config(path) -> str:
    with open(path, "w") as fh:
        json.dump(TOY_CONFIG, fh, indent=1)
        fh.write("\n")
    return str(path)


def scale_from_hello(hello: dict) -> EnvScale:
    w, h = hello["map_size_m"]
    return EnvScale(width_m=w, height_m=h)


@torch.no_grad()
def collect_rollout(client, actor, critic, scale, seeds, T, n, M, hyper, rng):
    """One episode per environment; returns (Rollout, mean episode reward)."""
    B = len(seeds)
    obs = client.reset(seeds)
    roll = Rollout(T, B, n, M, hyper.chunk)
    a_state = actor.initial_state(B, n)
    c_state = critic.initial_state(B, n)
    last_info = [None] * B
    # the first critic call needs info; reconstruct per-robot visibility from
    # the observations themselves (a human in view is a visible human)
    for t in range(T):
        if t % hyper.chunk == 0:
            ci = t // hyper.chunk
            roll.actor_h[ci, 0] = a_state[0].numpy()
            roll.actor_h[ci, 1] = a_state[1].numpy()
            roll.critic_h[ci, 0] = c_state[0].numpy()
            roll.critic_h[ci, 1] = c_state[1].numpy()
        ego_all = np.zeros((B, n, roll.ego.shape[-1]), dtype=np.float32)
        tok_all = np.zeros((B, n, M, roll.tokens.shape[-1]), dtype=np.float32)
        mask_all = np.zeros((B, n, M), dtype=bool)
        cego_all = np.zeros_like(ego_all)
        ctok_all = np.zeros((B, n, M, roll.critic_tokens.shape[-1]), dtype=np.float32)
        for b in range(B):
            ego, tok, mask = actor_inputs(obs[b], scale, M)
            ego_all[b], tok_all[b], mask_all[b] = ego, tok, mask
            info = last_info[b]
            if info is None:
                info = {
                    "human_states": [[0.0, 0.0, 0.0, 0.0]] * M,
                    "visibility": [[0] * M for _ in range(n)],
                }
            cego, ctok = critic_inputs(obs[b], info, scale, M)
            cego_all[b], ctok_all[b] = cego, ctok
        ego_t = torch.as_tensor(ego_all.reshape(B * n, -1))
        tok_t = torch.as_tensor(tok_all.reshape(B * n, M, -1))
        mask_t = torch.as_tensor(mask_all.reshape(B * n, M))
        sl, tl, a_state = actor(ego_t, tok_t, mask_t, a_state, (B, n))
        ds, dt_ = actor.distributions(sl, tl)
        a_speed = ds.sample()
        a_turn = dt_.sample()
        logp = (ds.log_prob(a_speed) + dt_.log_prob(a_turn)).view(B, n)
        v, c_state = critic(
            torch.as_tensor(cego_all.reshape(B * n, -1)),
            torch.as_tensor(ctok_all.reshape(B * n, M, -1)),
            c_state,
            (B, n),
        )
        actions = np.stack([a_speed.view(B, n).numpy(), a_turn.view(B, n).numpy()], axis=-1)
        results = client.step([[list(map(int, a)) for a in actions[b]] for b in range(B)])
        roll.ego[t], roll.tokens[t], roll.mask[t] = ego_all, tok_all, mask_all
        roll.critic_ego[t], roll.critic_tokens[t] = cego_all, ctok_all
        roll.actions[t] = actions
        roll.logp[t] = logp.numpy()
        roll.values[t] = v.numpy()
        for b, res in enumerate(results):
            roll.rewards[t, b] = res["reward"]
            roll.dones[t, b] = res["done"]
            last_info[b] = res["info"]
        obs = [res["obs"] for res in results]
    return roll, float(roll.rewards.sum(axis=0).mean())


def save_checkpoint(path, actor, critic, hyper, meta):
    torch.save(
        {
            "actor": actor.state_dict(),
            "critic": critic.state_dict(),
            "hyper": vars(hyper),
            "meta": meta,
            "config": TOY_CONFIG,
        },
        path,
    )


def load_checkpoint(path):
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    actor = Actor()
    actor.load_state_dict(ckpt["actor"])
    critic = Critic()
    critic.load_state_dict(ckpt["critic"])
    actor.eval()
    critic.eval()
    return actor, critic, ckpt


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="artifacts")
    parser.add_argument("--iterations", type=int, default=150)
    parser.add_argument("--envs", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-env-steps", type=int, default=2_000_000)
    parser.add_argument("--time-budget-s", type=float, default=7200.0)
    args = parser.parse_args(argv)

    torch.manual_seed(args.seed)
    np.random.seed(args.seed)
    torch.set_num_threads(max(1, os.cpu_count() or 1))
    os.makedirs(args.out, exist_ok=True)
    cfg_path = write_toy_config(os.path.join(args.out, "toy_config.json"))

    actor, critic = Actor(), Critic()
    hyper = TOY_HYPER
    optimizer = torch.optim.Adam(list(actor.parameters()) + list(critic.parameters()), lr=hyper.lr)

    T = TOY_CONFIG["horizon"]
    n = TOY_CONFIG["robots"]["n_robots"]
    M = TOY_CONFIG["crowd"]["n_humans"]
    rng = np.random.default_rng(args.seed)
    log_path = os.path.join(args.out, "training_log.csv")
    best = -np.inf
    env_steps = 0
    start = time.time()
    with BridgeClient(cfg_path) as client, open(log_path, "w", newline="") as log_fh:
        hello = client.hello()
        scale = scale_from_hello(hello)
        writer = csv.writer(log_fh)
        writer.writerow(["iteration", "env_steps", "mean_episode_reward", "policy", "value", "entropy", "elapsed_s"])
        for it in range(args.iterations):
            if env_steps >= args.max_env_steps or time.time() - start > args.time_budget_s:
                break
            seeds = [int(rng.integers(0, 2**31 - 1)) for _ in range(args.envs)]
            roll, mean_reward = collect_rollout(client, actor, critic, scale, seeds, T, n, M, hyper, rng)
            env_steps += T * args.envs
            stats = mappo_update(actor, critic, optimizer, roll, hyper)
            elapsed = time.time() - start
            writer.writerow(
                [it, env_steps, f"{mean_reward:.4f}", f"{stats['policy']:.4f}", f"{stats['value']:.4f}",
                 f"{stats['entropy']:.4f}", f"{elapsed:.1f}"]
            )
            log_fh.flush()
            print(
                f"iter {it} steps {env_steps} reward {mean_reward:.2f} "
                f"value_loss {stats['value']:.3f} entropy {stats['entropy']:.3f} ({elapsed:.0f}s)"
            )
            if mean_reward > best:
                best = mean_reward
                save_checkpoint(
                    os.path.join(args.out, "checkpoint_best.pt"), actor, critic, hyper,
                    {"iteration": it, "env_steps": env_steps, "mean_reward": mean_reward},
                )
            save_checkpoint(
                os.path.join(args.out, "checkpoint_last.pt"), actor, critic, hyper,
                {"iteration": it, "env_steps": env_steps, "mean_reward": mean_reward},
            )
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        rows = list(csv.DictReader(open(log_path)))
        xs = [int(r["env_steps"]) for r in rows]
        ys = [float(r["mean_episode_reward"]) for r in rows]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(xs, ys)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("mean episode reward")
        fig.tight_layout()
        fig.savefig(os.path.join(args.out, "reward_curve.png"), dpi=130)
    except ImportError:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
