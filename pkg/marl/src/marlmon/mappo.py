"""MAPPO: generalized advantage estimation and the clipped-surrogate update
over chunked recurrent rollouts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .features import CRITIC_TOKEN_DIM, EGO_DIM, TOKEN_DIM
from .nets import HIDDEN, Actor, Critic


@dataclass
class Hyper:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    value_coef: float = 0.5
    entropy_speed: float = 0.01
    entropy_turn: float = 0.001
    lr: float = 3e-4
    epochs: int = 20
    minibatches: int = 20
    chunk: int = 50
    grad_norm: float = 0.5


class Rollout:
    """Time-major buffers for one batched on-policy collection phase.

    Chunk boundaries coincide with storage rows modulo `chunk`; hidden states
    are snapshotted at every chunk start so updates can truncate BPTT there.
    Episodes reset only between collection phases, so chunks never straddle a
    reset.
    """

    def __init__(self, T: int, B: int, n: int, M: int, chunk: int):
        self.T, self.B, self.n, self.M, self.chunk = T, B, n, M, chunk
        self.ego = np.zeros((T, B, n, EGO_DIM), dtype=np.float32)
        self.tokens = np.zeros((T, B, n, M, TOKEN_DIM), dtype=np.float32)
        self.mask = np.zeros((T, B, n, M), dtype=bool)
        self.critic_ego = np.zeros((T, B, n, EGO_DIM), dtype=np.float32)
        self.critic_tokens = np.zeros((T, B, n, M, CRITIC_TOKEN_DIM), dtype=np.float32)
        self.actions = np.zeros((T, B, n, 2), dtype=np.int64)
        self.logp = np.zeros((T, B, n), dtype=np.float32)
        self.rewards = np.zeros((T, B), dtype=np.float32)
        self.values = np.zeros((T, B), dtype=np.float32)
        self.dones = np.zeros((T, B), dtype=bool)
        n_chunks = (T + chunk - 1) // chunk
        self.actor_h = np.zeros((n_chunks, 2, B * n, HIDDEN), dtype=np.float32)
        self.critic_h = np.zeros((n_chunks, 2, B * n, HIDDEN), dtype=np.float32)


def compute_gae(rewards, values, dones, gamma: float, lam: float):
    """Advantages and returns; terminal steps bootstrap zero."""
    T, B = rewards.shape
    adv = np.zeros((T, B), dtype=np.float32)
    last = np.zeros(B, dtype=np.float32)
    for t in range(T - 1, -1, -1):
        next_value = values[t + 1] if t + 1 < T else np.zeros(B, dtype=np.float32)
        mask = 1.0 - dones[t].astype(np.float32)
        delta = rewards[t] + gamma * next_value * mask - values[t]
        last = delta + gamma * lam * mask * last
        adv[t] = last
    return adv, adv + values


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor, clip: float) -> torch.Tensor:
    """Elementwise min(r*A, clip(r)*A); the objective term to maximize."""
    return torch.minimum(ratio * adv, torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * adv)


def evaluate_chunk(actor: Actor, critic: Critic, batch: dict, team_n: int):
    """Re-run the recurrent stack over one (chunk, envs) slice.

    batch tensors are time-major with flattened env*robot rows where
    applicable. Returns logp (L, E, n), entropies, values (L, E).
    """
    L, E = batch["rewards"].shape
    n = team_n
    a_state = (batch["actor_h"][0].clone(), batch["actor_h"][1].clone())
    c_state = (batch["critic_h"][0].clone(), batch["critic_h"][1].clone())
    logps, ent_s, ent_t, values = [], [], [], []
    for t in range(L):
        ego = batch["ego"][t].reshape(E * n, -1)
        tokens = batch["tokens"][t].reshape(E * n, batch["tokens"].shape[3], -1)
        mask = batch["mask"][t].reshape(E * n, -1)
        sl, tl, a_state = actor(ego, tokens, mask, a_state, (E, n))
        ds, dt_ = actor.distributions(sl, tl)
        acts = batch["actions"][t].reshape(E * n, 2)
        logps.append((ds.log_prob(acts[:, 0]) + dt_.log_prob(acts[:, 1])).view(E, n))
        ent_s.append(ds.entropy().view(E, n))
        ent_t.append(dt_.entropy().view(E, n))
        cego = batch["critic_ego"][t].reshape(E * n, -1)
        ctok = batch["critic_tokens"][t].reshape(E * n, batch["critic_tokens"].shape[3], -1)
        v, c_state = critic(cego, ctok, c_state, (E, n))
        values.append(v)
    return (
        torch.stack(logps),
        torch.stack(ent_s),
        torch.stack(ent_t),
        torch.stack(values),
    )


def mappo_update(actor: Actor, critic: Critic, optimizer, rollout: Rollout, hyper: Hyper):
    """One full MAPPO update; returns loss statistics."""
    T, B, n = rollout.T, rollout.B, rollout.n
    adv, ret = compute_gae(rollout.rewards, rollout.values, rollout.dones, hyper.gamma, hyper.lam)
    adv_norm = (adv - adv.mean()) / (adv.std() + 1e-8)

    chunk = hyper.chunk
    n_chunks = (T + chunk - 1) // chunk
    # minibatch unit = (chunk, env); units sharing a chunk length batch together
    units = [(c, b, min(chunk, T - c * chunk)) for c in range(n_chunks) for b in range(B)]
    rng = np.random.default_rng(0)
    stats = {"policy": 0.0, "value": 0.0, "entropy": 0.0, "updates": 0}
    tt = torch.as_tensor
    for _ in range(hyper.epochs):
        order = rng.permutation(len(units))
        groups = np.array_split(order, min(hyper.minibatches, len(units)))
        for group in groups:
            if len(group) == 0:
                continue
            group = sorted(group, key=lambda i: units[i][2])
            # split further if lengths differ (only the tail chunk can)
            same = {}
            for i in group:
                same.setdefault(units[i][2], []).append(i)
            for L, members in same.items():
                cs = [units[i][0] for i in members]
                bs = [units[i][1] for i in members]
                t0s = [c * chunk for c in cs]
                batch = {
                    "ego": tt(np.stack([rollout.ego[t0 : t0 + L, b] for t0, b in zip(t0s, bs)], axis=1)),
                    "tokens": tt(np.stack([rollout.tokens[t0 : t0 + L, b] for t0, b in zip(t0s, bs)], axis=1)),
                    "mask": tt(np.stack([rollout.mask[t0 : t0 + L, b] for t0, b in zip(t0s, bs)], axis=1)),
                    "critic_ego": tt(
                        np.stack([rollout.critic_ego[t0 : t0 + L, b] for t0, b in zip(t0s, bs)], axis=1)
                    ),
                    "critic_tokens": tt(
                        np.stack([rollout.critic_tokens[t0 : t0 + L, b] for t0, b in zip(t0s, bs)], axis=1)
                    ),
                    "actions": tt(np.stack([rollout.actions[t0 : t0 + L, b] for t0, b in zip(t0s, bs)], axis=1)),
                    "rewards": tt(np.stack([rollout.rewards[t0 : t0 + L, b] for t0, b in zip(t0s, bs)], axis=1)),
                    "actor_h": tt(
                        np.stack(
                            [rollout.actor_h[c, :, b * n : (b + 1) * n] for c, b in zip(cs, bs)], axis=2
                        ).reshape(2, len(bs) * n, HIDDEN)
                    ),
                    "critic_h": tt(
                        np.stack(
                            [rollout.critic_h[c, :, b * n : (b + 1) * n] for c, b in zip(cs, bs)], axis=2
                        ).reshape(2, len(bs) * n, HIDDEN)
                    ),
                }
                old_logp = tt(np.stack([rollout.logp[t0 : t0 + L, b] for t0, b in zip(t0s, bs)], axis=1))
                mb_adv = tt(np.stack([adv_norm[t0 : t0 + L, b] for t0, b in zip(t0s, bs)], axis=1))
                mb_ret = tt(np.stack([ret[t0 : t0 + L, b] for t0, b in zip(t0s, bs)], axis=1))

                logp, ent_s, ent_t, values = evaluate_chunk(actor, critic, batch, n)
                ratio = torch.exp(logp - old_logp)
                surrogate = clipped_surrogate(ratio, mb_adv.unsqueeze(-1), hyper.clip).mean()
                value_loss = 0.5 * ((values - mb_ret) ** 2).mean()
                entropy = hyper.entropy_speed * ent_s.mean() + hyper.entropy_turn * ent_t.mean()
                loss = -surrogate + hyper.value_coef * value_loss - entropy
                optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(
                    [p for g in optimizer.param_groups for p in g["params"]], hyper.grad_norm
                )
                optimizer.step()
                if not torch.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss: {loss.item()}")
                stats["policy"] += float(surrogate.detach())
                stats["value"] += float(value_loss.detach())
                stats["entropy"] += float((ent_s.mean() + ent_t.mean()).detach())
                stats["updates"] += 1
    for k in ("policy", "value", "entropy"):
        stats[k] /= max(1, stats["updates"])
    return stats


def total_loss_for_batch(actor, critic, batch, old_logp, adv, ret, hyper: Hyper, team_n: int):
    """Single-minibatch loss (used by the finite-difference gradient check)."""
    logp, ent_s, ent_t, values = evaluate_chunk(actor, critic, batch, team_n)
    ratio = torch.exp(logp - old_logp)
    surrogate = clipped_surrogate(ratio, adv.unsqueeze(-1), hyper.clip).mean()
    value_loss = 0.5 * ((values - ret) ** 2).mean()
    entropy = hyper.entropy_speed * ent_s.mean() + hyper.entropy_turn * ent_t.mean()
    return -surrogate + hyper.value_coef * value_loss - entropy
