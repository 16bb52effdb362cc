"""Actor and critic networks: set-attention observation encoding, dual-stage
recurrent interaction memory, categorical decision heads, attention-pooled
centralized value."""

from __future__ import annotations

import torch
import torch.nn as nn

from .features import CRITIC_TOKEN_DIM, EGO_DIM, TOKEN_DIM

HIDDEN = 64
HEADS = 4
N_SPEEDS = 3
N_TURNS = 3


def mlp(in_dim: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, HIDDEN), nn.ReLU(), nn.Linear(HIDDEN, out_dim))


class SetEncoder(nn.Module):
    """Ego embedding cross-attends over embedded human tokens (plus a learned
    dummy token so the output exists with nothing in view)."""

    def __init__(self, token_dim: int):
        super().__init__()
        self.ego_mlp = mlp(EGO_DIM, HIDDEN)
        self.token_mlp = mlp(token_dim, HIDDEN)
        self.dummy = nn.Parameter(torch.zeros(HIDDEN))
        self.attn = nn.MultiheadAttention(HIDDEN, HEADS, batch_first=True)

    def forward(self, ego, tokens, mask=None):
        """ego (B, EGO_DIM); tokens (B, H, token_dim); mask (B, H) True=real.

        Returns fused (B, 2*HIDDEN) = ego embedding || attention context.
        """
        b = ego.shape[0]
        h_rob = self.ego_mlp(ego)
        tok = self.token_mlp(tokens)
        dummy = self.dummy.expand(b, 1, HIDDEN)
        tok = torch.cat([dummy, tok], dim=1)
        if mask is None:
            pad = None
        else:
            valid = torch.cat([torch.ones(b, 1, dtype=torch.bool, device=mask.device), mask], dim=1)
            pad = ~valid
        ctx, _ = self.attn(h_rob.unsqueeze(1), tok, tok, key_padding_mask=pad, need_weights=False)
        return torch.cat([h_rob, ctx.squeeze(1)], dim=-1)


class InteractionMemory(nn.Module):
    """Private GRU, attention over the team's hidden states, interaction GRU."""

    def __init__(self):
        super().__init__()
        self.gru_ego = nn.GRUCell(2 * HIDDEN, HIDDEN)
        self.attn = nn.MultiheadAttention(HIDDEN, HEADS, batch_first=True)
        self.gru_int = nn.GRUCell(2 * HIDDEN, HIDDEN)

    def forward(self, fused, h_ego, h_int, team_shape):
        """fused (B*n, 2H); hidden states (B*n, H); team_shape = (B, n).

        Returns (h_int_new as features, (h_ego_new, h_int_new)).
        """
        b, n = team_shape
        h_ego_new = self.gru_ego(fused, h_ego)
        stacked = h_ego_new.view(b, n, HIDDEN)
        ctx, _ = self.attn(stacked, stacked, stacked, need_weights=False)
        ctx = ctx.reshape(b * n, HIDDEN)
        h_int_new = self.gru_int(torch.cat([h_ego_new, ctx], dim=-1), h_int)
        return h_int_new, (h_ego_new, h_int_new)


class Actor(nn.Module):
    """Shared policy: encoder -> memory -> independent speed/turn heads."""

    def __init__(self):
        super().__init__()
        self.encoder = SetEncoder(TOKEN_DIM)
        self.memory = InteractionMemory()
        self.speed_head = nn.Linear(HIDDEN, N_SPEEDS)
        self.turn_head = nn.Linear(HIDDEN, N_TURNS)

    def initial_state(self, b, n):
        z = torch.zeros(b * n, HIDDEN)
        return z, z.clone()

    def forward(self, ego, tokens, mask, state, team_shape):
        fused = self.encoder(ego, tokens, mask)
        feat, state = self.memory(fused, state[0], state[1], team_shape)
        return self.speed_head(feat), self.turn_head(feat), state

    def distributions(self, speed_logits, turn_logits):
        return (
            torch.distributions.Categorical(logits=speed_logits),
            torch.distributions.Categorical(logits=turn_logits),
        )


class Critic(nn.Module):
    """Separately parameterized centralized value: same encoder/memory stack
    over ground-truth-augmented tokens, pooled by a learned query."""

    def __init__(self):
        super().__init__()
        self.encoder = SetEncoder(CRITIC_TOKEN_DIM)
        self.memory = InteractionMemory()
        self.query = nn.Parameter(torch.zeros(1, 1, HIDDEN))
        self.attn = nn.MultiheadAttention(HIDDEN, HEADS, batch_first=True)
        self.value_mlp = mlp(HIDDEN, 1)
        nn.init.normal_(self.query, std=0.1)

    def initial_state(self, b, n):
        z = torch.zeros(b * n, HIDDEN)
        return z, z.clone()

    def forward(self, ego, tokens, state, team_shape):
        fused = self.encoder(ego, tokens, None)
        feat, state = self.memory(fused, state[0], state[1], team_shape)
        b, n = team_shape
        stacked = feat.view(b, n, HIDDEN)
        pooled, _ = self.attn(self.query.expand(b, 1, HIDDEN), stacked, stacked, need_weights=False)
        value = self.value_mlp(pooled.squeeze(1)).squeeze(-1)
        return value, state


EGO_STATE = 0
INT_STATE = 1
