"""Decentralised transformer agent.

The agent's recurrent hidden vector is prepended to its embedded entity rows;
after the encoder, the transformed hidden row is both the new hidden state and
the source of the action-values. Entity-targeted actions (optional) read their
value from the transformed embedding of the targeted entity.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

from .numeric_core import ConfigurationError, Linear, UsageError, linear
from .transformer import TransformerConfig, TransformerEncoder, VertexEmbedder


def init_hidden(h: int, batch: tuple[int, ...] = (), dtype=torch.float32) -> torch.Tensor:
    return torch.zeros(*batch, h, dtype=dtype)


class TransformerAgent(nn.Module):
    def __init__(
        self,
        n_features: int,
        n_actions: int,
        cfg: TransformerConfig = TransformerConfig(),
        entity_actions: bool = False,
    ):
        super().__init__()
        self.cfg = cfg
        self.n_features = n_features
        self.n_actions = n_actions
        self.embed = VertexEmbedder(n_features, cfg.emb_dim)
        self.encoder = TransformerEncoder(cfg)
        self.q_head = Linear(cfg.emb_dim, n_actions, bias=False)
        self.entity_head = Linear(cfg.emb_dim, 1, bias=False) if entity_actions else None

    @property
    def hidden_dim(self) -> int:
        return self.cfg.emb_dim

    def init_hidden(self, *batch: int) -> torch.Tensor:
        return init_hidden(self.cfg.emb_dim, batch, dtype=self.q_head.weight.dtype)

    def forward(self, obs: torch.Tensor, hidden: torch.Tensor):
        """Return ``(q_values, entity_embeddings, new_hidden)``.

        ``obs`` is ``(..., k, z)`` and ``hidden`` is ``(..., h)``; any number
        of entities ``k`` is accepted.
        """
        if obs.shape[-1] != self.n_features:
            raise ConfigurationError(
                f"observation has {obs.shape[-1]} features, agent expects {self.n_features}"
            )
        x = torch.cat([hidden.unsqueeze(-2), self.embed(obs)], dim=-2)
        out = self.encoder(x)
        new_hidden = out[..., 0, :]
        return self.q_head(new_hidden), out[..., 1:, :], new_hidden


def agent_forward(obs: torch.Tensor, hidden: torch.Tensor, agent: TransformerAgent):
    return agent(obs, hidden)


def decoupled_q_values(
    entity_embeddings: torch.Tensor, target_indices: Sequence[int], w_hat: torch.Tensor
) -> torch.Tensor:
    """One value per targeted entity, ``e_i W_hat``, in ``target_indices`` order."""
    k = entity_embeddings.shape[-2]
    idx = list(target_indices)
    if any(i < 0 or i >= k for i in idx):
        raise UsageError(f"target index out of range for {k} entities: {idx}")
    picked = entity_embeddings[..., idx, :]
    return linear(picked, w_hat).squeeze(-1)


def full_q_values(agent: TransformerAgent, obs: torch.Tensor, hidden: torch.Tensor, target_indices: Sequence[int]):
    """Concatenate ``[non-entity actions | entity actions by index]``."""
    if agent.entity_head is None:
        raise ConfigurationError("agent was built without an entity-action head")
    q, ents, new_hidden = agent(obs, hidden)
    q_ent = decoupled_q_values(ents, target_indices, agent.entity_head.weight)
    return torch.cat([q, q_ent], dim=-1), new_hidden


def select_actions(
    q_values: np.ndarray, available: np.ndarray, epsilon: float, rng: np.random.Generator
) -> np.ndarray:
    """Epsilon-greedy choice for a batch of agents (rows of ``q_values``).

    Greedy ties go to the lowest index; exploration is uniform over the
    available actions. Unavailable actions are never returned.
    """
    q = np.atleast_2d(np.asarray(q_values, dtype=np.float64))
    avail = np.atleast_2d(np.asarray(available, dtype=bool))
    counts = avail.sum(axis=1)
    if (counts == 0).any():
        raise UsageError("an agent has no available action")
    greedy = np.where(avail, q, -np.inf).argmax(axis=1)
    explore = rng.random(len(q)) < epsilon
    pick = np.minimum((rng.random(len(q)) * counts).astype(np.int64), counts - 1)
    # index of the pick-th available action in each row
    cum = np.cumsum(avail, axis=1)
    random_choice = (cum <= pick[:, None]).sum(axis=1)
    return np.where(explore, random_choice, greedy)


def select_action(q_values, available_mask, epsilon: float, rng: np.random.Generator) -> int:
    return int(select_actions(np.asarray(q_values)[None], np.asarray(available_mask)[None], epsilon, rng)[0])
