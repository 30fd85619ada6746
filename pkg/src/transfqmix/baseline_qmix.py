"""QMix baseline: recurrent agents fed flat vectors, hypernetwork mixer.

Both classes expose the same call signatures as their transformer
counterparts so the learner can combine any agent with any mixer.
"""

from __future__ import annotations

import torch
from torch import nn

from .numeric_core import ConfigurationError, Linear
from .transf_mixer import mix, mixing_activation


class RNNAgent(nn.Module):
    """``relu(x W_in + b) -> GRU cell -> q head``."""

    obs_kind = "vector"

    def __init__(self, input_dim: int, n_actions: int, hidden_dim: int = 64):
        super().__init__()
        self.input_dim = input_dim
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim
        self.encoder = Linear(input_dim, hidden_dim)
        self.rnn = nn.GRUCell(hidden_dim, hidden_dim)
        self.q_head = Linear(hidden_dim, n_actions)

    def init_hidden(self, *batch: int) -> torch.Tensor:
        return torch.zeros(*batch, self.hidden_dim, dtype=self.q_head.weight.dtype)

    def forward(self, obs: torch.Tensor, hidden: torch.Tensor):
        """Return ``(q_values, None, new_hidden)`` for ``obs (..., input_dim)``."""
        if obs.shape[-1] != self.input_dim:
            raise ConfigurationError(
                f"observation width {obs.shape[-1]} does not match agent input width {self.input_dim}"
            )
        lead = obs.shape[:-1]
        x = torch.relu(self.encoder(obs)).reshape(-1, self.hidden_dim)
        h = self.rnn(x, hidden.reshape(-1, self.hidden_dim)).reshape(*lead, self.hidden_dim)
        return self.q_head(h), None, h


def rnn_agent_forward(obs, hidden, agent: RNNAgent):
    q, _, h = agent(obs, hidden)
    return q, h


class HypernetMixer(nn.Module):
    """State-conditioned mixing weights from four hypernetworks.

    Agent hidden states and the recurrent argument are accepted and ignored,
    which keeps the call compatible with the transformer mixer.
    """

    def __init__(
        self,
        state_dim: int,
        n_agents: int,
        embed_dim: int = 32,
        hypernet_dim: int = 64,
        activation: str = "elu",
    ):
        super().__init__()
        mixing_activation(activation)
        self.state_dim = state_dim
        self.n_agents = n_agents
        self.embed_dim = embed_dim
        self.activation = activation
        self.hyper_w1 = nn.Sequential(Linear(state_dim, hypernet_dim), nn.ReLU(), Linear(hypernet_dim, n_agents * embed_dim))
        self.hyper_b1 = Linear(state_dim, embed_dim)
        self.hyper_w2 = nn.Sequential(Linear(state_dim, hypernet_dim), nn.ReLU(), Linear(hypernet_dim, embed_dim))
        self.hyper_b2 = nn.Sequential(Linear(state_dim, embed_dim), nn.ReLU(), Linear(embed_dim, 1))

    def init_recurrent(self, *batch: int) -> torch.Tensor:
        return torch.zeros(*batch, 0, dtype=self.hyper_b1.weight.dtype)

    def mixing_weights(self, state: torch.Tensor):
        if state.shape[-1] != self.state_dim:
            raise ConfigurationError(f"state width {state.shape[-1]} != mixer state width {self.state_dim}")
        lead = state.shape[:-1]
        w1 = self.hyper_w1(state).abs().reshape(*lead, self.n_agents, self.embed_dim)
        b1 = self.hyper_b1(state)
        w2 = self.hyper_w2(state).abs()
        b2 = self.hyper_b2(state).squeeze(-1)
        return w1, b1, w2, b2

    def forward(self, q_agents: torch.Tensor, hidden, state: torch.Tensor, rec=None):
        if q_agents.shape[-1] != self.n_agents:
            raise ConfigurationError(f"mixer built for {self.n_agents} agents, got {q_agents.shape[-1]}")
        return mix(q_agents, *self.mixing_weights(state), activation=self.activation), rec


def hypernet_mixer_forward(q_agents, state_flat, mixer: HypernetMixer):
    return mixer(q_agents, None, state_flat)[0]
