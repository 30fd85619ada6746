"""Model families: which agent, which mixer and which input encodings.

``transfqmix`` pairs transformer agents with the transformer mixer. The other
families are the ablation grid: recurrent vs transformer agents, hypernetwork
vs transformer mixer, flat-vector vs entity-matrix state.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .baseline_qmix import HypernetMixer, RNNAgent
from .numeric_core import ConfigurationError, ParamStore
from .spread_env import N_ACTIONS, SpreadConfig
from .transf_agent import TransformerAgent
from .transf_mixer import TransformerMixer
from .transformer import TransformerConfig


@dataclass(frozen=True)
class FamilySpec:
    agent: str  # "transformer" | "rnn"
    mixer: str  # "transformer" | "hypernet"
    state: str  # "graph" (entity matrix) | "graph_flat" | "vector"

    @property
    def uses_transformer(self) -> bool:
        return self.agent == "transformer" or self.mixer == "transformer"

    @property
    def obs_kind(self) -> str:
        return "graph" if self.agent == "transformer" else "vector"


FAMILIES: dict[str, FamilySpec] = {
    "transfqmix": FamilySpec("transformer", "transformer", "graph"),
    "qmix": FamilySpec("rnn", "hypernet", "vector"),
    "qmix_graph_state": FamilySpec("rnn", "hypernet", "graph_flat"),
    "qmix_transformer_mixer": FamilySpec("rnn", "transformer", "graph"),
    "transformer_agents_hypernet": FamilySpec("transformer", "hypernet", "graph_flat"),
}
ABLATION_FAMILIES = ("qmix", "qmix_graph_state", "qmix_transformer_mixer", "transformer_agents_hypernet")


def family_spec(name: str) -> FamilySpec:
    try:
        return FAMILIES[name]
    except KeyError:
        raise ConfigurationError(f"unknown model family {name!r}; choose from {sorted(FAMILIES)}") from None


def default_learning_setup(family: str) -> tuple[str, float, float]:
    """(optimizer kind, learning rate, td lambda) for a family."""
    if family_spec(family).uses_transformer:
        return "adam", 1e-3, 0.6
    return "rmsprop", 5e-4, 0.0


class MultiAgentModel(nn.Module):
    """Shared-parameter agent network plus the centralised mixer."""

    def __init__(
        self,
        family: str,
        env: SpreadConfig,
        tcfg: TransformerConfig = TransformerConfig(),
        rnn_hidden: int = 64,
        mixing_embed: int = 32,
        hypernet_hidden: int = 64,
    ):
        super().__init__()
        self.family = family
        self.spec = family_spec(family)
        self.n_agents = env.n
        if self.spec.agent == "transformer":
            self.agent = TransformerAgent(env.obs_features, N_ACTIONS, tcfg)
            agent_hidden = tcfg.emb_dim
        else:
            self.agent = RNNAgent(env.obs_vector_dim, N_ACTIONS, rnn_hidden)
            agent_hidden = rnn_hidden
        if self.spec.mixer == "transformer":
            self.mixer = TransformerMixer(env.state_features, tcfg, agent_hidden_dim=agent_hidden)
        else:
            state_dim = env.state_vector_dim if self.spec.state == "vector" else env.n_entities * env.state_features
            self.mixer = HypernetMixer(state_dim, env.n, mixing_embed, hypernet_hidden)

    def params(self) -> ParamStore:
        return ParamStore({"agent": self.agent, "mixer": self.mixer})

    def agent_input(self, obs: torch.Tensor | None, obs_vec: torch.Tensor | None) -> torch.Tensor:
        return obs if self.spec.obs_kind == "graph" else obs_vec

    def mixer_input(self, state: torch.Tensor | None, state_vec: torch.Tensor | None) -> torch.Tensor:
        if self.spec.state == "graph":
            return state
        if self.spec.state == "graph_flat":
            return state.flatten(-2)
        return state_vec


def needed_inputs(family: str) -> set[str]:
    spec = family_spec(family)
    keys = {"obs"} if spec.obs_kind == "graph" else {"obs_vec"}
    keys.add("state_vec" if spec.state == "vector" else "state")
    return keys
