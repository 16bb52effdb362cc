"""Observation and info JSON -> network tensors.

The actor sees only local observations (no ground truth); the critic sees all
humans' true states with per-robot one-hot visibility flags, delivered through
the bridge's training info channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

EGO_DIM = 27  # x, y, sin, cos, v, 16 lidar, 5 peer-mean, peer count
TOKEN_DIM = 7  # rel x, rel y, abs x, abs y, sin, cos, v
CRITIC_TOKEN_DIM = TOKEN_DIM + 2  # + one-hot visibility


@dataclass
class EnvScale:
    width_m: float
    height_m: float
    v_max_robot: float = 2.0
    v_max_human: float = 1.5
    lidar_range: float = 10.0
    sensor_range: float = 10.0


def ego_features(obs: dict, scale: EnvScale) -> np.ndarray:
    ego = obs["ego"]
    x, y = ego["p"]
    th = ego["theta"]
    out = np.empty(EGO_DIM, dtype=np.float32)
    out[0] = x / scale.width_m
    out[1] = y / scale.height_m
    out[2] = math.sin(th)
    out[3] = math.cos(th)
    out[4] = ego["v"] / scale.v_max_robot
    out[5:21] = np.asarray(ego["lidar"], dtype=np.float32) / scale.lidar_range
    peers = obs["peers"]
    if peers:
        arr = np.asarray(peers, dtype=np.float32)
        out[21] = float(np.mean(arr[:, 0] - x)) / scale.width_m
        out[22] = float(np.mean(arr[:, 1] - y)) / scale.height_m
        out[23] = float(np.mean(np.sin(arr[:, 2])))
        out[24] = float(np.mean(np.cos(arr[:, 2])))
        out[25] = float(np.mean(arr[:, 3])) / scale.v_max_robot
    else:
        out[21:26] = 0.0
    out[26] = len(peers) / 10.0
    return out


def human_token(hx, hy, hth, hv, ego_x, ego_y, scale: EnvScale) -> np.ndarray:
    return np.array(
        [
            (hx - ego_x) / scale.sensor_range,
            (hy - ego_y) / scale.sensor_range,
            hx / scale.width_m,
            hy / scale.height_m,
            math.sin(hth),
            math.cos(hth),
            hv / scale.v_max_human,
        ],
        dtype=np.float32,
    )


def actor_inputs(obs_batch, scale: EnvScale, max_tokens: int):
    """Per-robot ego features and padded visible-human tokens.

    obs_batch: list over robots of observation dicts (one environment).
    Returns (ego (n, EGO_DIM), tokens (n, max_tokens, TOKEN_DIM),
    mask (n, max_tokens) with True = real token).
    """
    n = len(obs_batch)
    ego = np.zeros((n, EGO_DIM), dtype=np.float32)
    tokens = np.zeros((n, max_tokens, TOKEN_DIM), dtype=np.float32)
    mask = np.zeros((n, max_tokens), dtype=bool)
    for i, obs in enumerate(obs_batch):
        ego[i] = ego_features(obs, scale)
        ex, ey = obs["ego"]["p"]
        for j, h in enumerate(obs["humans"][:max_tokens]):
            tokens[i, j] = human_token(h[0], h[1], h[2], h[3], ex, ey, scale)
            mask[i, j] = True
    return ego, tokens, mask


def critic_inputs(obs_batch, info: dict, scale: EnvScale, n_humans: int):
    """Ground-truth human tokens with per-robot visibility one-hots.

    Returns (ego (n, EGO_DIM), tokens (n, M, CRITIC_TOKEN_DIM)); every human
    is always present (assumed observable for value estimation).
    """
    n = len(obs_batch)
    ego = np.zeros((n, EGO_DIM), dtype=np.float32)
    tokens = np.zeros((n, n_humans, CRITIC_TOKEN_DIM), dtype=np.float32)
    states = info["human_states"]
    visibility = info["visibility"]
    for i, obs in enumerate(obs_batch):
        ego[i] = ego_features(obs, scale)
        ex, ey = obs["ego"]["p"]
        for j in range(n_humans):
            hx, hy, hth, hv = states[j]
            tokens[i, j, :TOKEN_DIM] = human_token(hx, hy, hth, hv, ex, ey, scale)
            vis = visibility[i][j]
            tokens[i, j, TOKEN_DIM + 0] = 1.0 - vis
            tokens[i, j, TOKEN_DIM + 1] = float(vis)
    return ego, tokens


def to_tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x))
