"""Centralised transformer mixer.

The encoder sees ``[agent hidden rows | 3 recurrent rows | embedded state rows]``.
Its outputs generate the weights of a two-layer monotonic mixing network:

    W1 = |rows 0..n-1|      b1 = row n
    W2 = |row n+1|^T        b2 = relu(row n+2 . proj)
    Q_tot = (Q_A W1 + b1) W2 + b2

The three transformed recurrent rows (before any activation) are carried to
the next time step.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .numeric_core import ConfigurationError, Linear
from .transformer import TransformerConfig, TransformerEncoder, VertexEmbedder

N_RECURRENT = 3


def init_recurrent(h: int, batch: tuple[int, ...] = (), dtype=torch.float32) -> torch.Tensor:
    """Zero rows for ``w_b1``, ``w_W2`` and ``w_b2``; shape ``(*batch, 3, h)``."""
    return torch.zeros(*batch, N_RECURRENT, h, dtype=dtype)


def mixing_activation(name: str):
    if name == "none":
        return lambda x: x
    if name == "elu":
        return F.elu
    raise ConfigurationError(f"unknown mixing activation {name!r}")


def mix(q_agents: torch.Tensor, w1: torch.Tensor, b1: torch.Tensor, w2: torch.Tensor, b2: torch.Tensor, activation="none"):
    """Two-layer mixing MLP with already-constrained weights.

    ``q_agents (..., n)``, ``w1 (..., n, h)``, ``b1 (..., h)``, ``w2 (..., h)``,
    ``b2 (...)`` -> ``(...)``.
    """
    hidden = mixing_activation(activation)((q_agents.unsqueeze(-2) @ w1).squeeze(-2) + b1)
    return (hidden * w2).sum(-1) + b2


class TransformerMixer(nn.Module):
    def __init__(
        self,
        state_features: int,
        cfg: TransformerConfig = TransformerConfig(),
        activation: str = "none",
        agent_hidden_dim: int | None = None,
    ):
        super().__init__()
        mixing_activation(activation)
        self.cfg = cfg
        self.activation = activation
        self.state_features = state_features
        self.embed = VertexEmbedder(state_features, cfg.emb_dim)
        # agents whose hidden width differs from emb_dim (recurrent baselines)
        # are projected into the mixer's embedding space
        if agent_hidden_dim is not None and agent_hidden_dim != cfg.emb_dim:
            self.hidden_proj = Linear(agent_hidden_dim, cfg.emb_dim, bias=False)
        else:
            self.hidden_proj = None
        self.encoder = TransformerEncoder(cfg)
        self.b2_proj = Linear(cfg.emb_dim, 1, bias=False)

    def init_recurrent(self, *batch: int) -> torch.Tensor:
        return init_recurrent(self.cfg.emb_dim, batch, dtype=self.b2_proj.weight.dtype)

    def mixing_weights(self, hidden: torch.Tensor, state: torch.Tensor, rec: torch.Tensor):
        if state.shape[-1] != self.state_features:
            raise ConfigurationError(
                f"state has {state.shape[-1]} features, mixer expects {self.state_features}"
            )
        n = hidden.shape[-2]
        if self.hidden_proj is not None:
            hidden = self.hidden_proj(hidden)
        x = torch.cat([hidden, rec, self.embed(state)], dim=-2)
        out = self.encoder(x)
        w1 = out[..., :n, :].abs()
        b1 = out[..., n, :]
        w2 = out[..., n + 1, :].abs()
        b2 = torch.relu(self.b2_proj(out[..., n + 2, :])).squeeze(-1)
        return (w1, b1, w2, b2), out[..., n : n + N_RECURRENT, :]

    def forward(self, q_agents: torch.Tensor, hidden: torch.Tensor, state: torch.Tensor, rec: torch.Tensor):
        """Return ``(Q_tot, new_recurrent)``.

        ``q_agents (..., n)``, ``hidden (..., n, h)``, ``state (..., k, z_s)``,
        ``rec (..., 3, h)``.
        """
        if q_agents.shape[-1] != hidden.shape[-2]:
            raise ConfigurationError(
                f"{q_agents.shape[-1]} agent values but {hidden.shape[-2]} hidden states"
            )
        weights, new_rec = self.mixing_weights(hidden, state, rec)
        return mix(q_agents, *weights, activation=self.activation), new_rec


def mixer_forward(q_agents, hidden, state, rec, mixer: TransformerMixer):
    return mixer(q_agents, hidden, state, rec)
