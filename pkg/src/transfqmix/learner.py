"""Centralised training of decentralised agents.

Episodes are collected with epsilon-greedy agents, stored whole in a FIFO
replay buffer, and replayed in batches. Each update unrolls the agents and
the mixer over full episodes (back-propagation through time), builds TD(lambda)
targets from separately unrolled target networks, and takes one optimizer
step on the union of agent and mixer parameters.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .models import MultiAgentModel, needed_inputs
from .numeric_core import (
    ConfigurationError,
    NumericalError,
    OptimizerState,
    backprop,
    make_optimizer,
    optimizer_step,
)
from .spread_env import N_ACTIONS, SpreadConfig, SpreadEnv
from .transf_agent import select_actions

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    buffer_size: int = 5000
    target_update_interval: int = 200
    gamma: float = 0.99
    td_lambda: float = 0.6
    epsilon_start: float = 1.0
    epsilon_finish: float = 0.05
    epsilon_anneal_steps: int = 100_000
    total_env_steps: int = 500_000
    optimizer: str = "adam"
    lr: float = 1e-3
    grad_clip: float = 10.0
    double_q: bool = True
    # episodes collected in parallel between two updates
    episodes_per_update: int = 8
    # gradient from the mixer loss into the agents' hidden states
    mixer_grad_to_agents: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in [0, 1)")
        if not 0.0 <= self.td_lambda <= 1.0:
            raise ConfigurationError("td_lambda must lie in [0, 1]")
        if self.epsilon_finish > self.epsilon_start:
            raise ConfigurationError("epsilon_finish must not exceed epsilon_start")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ConfigurationError("need 1 <= batch_size <= buffer_size")
        if self.episodes_per_update < 1 or self.target_update_interval < 1:
            raise ConfigurationError("episodes_per_update and target_update_interval must be positive")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


def epsilon_at(t: int, config: TrainConfig) -> float:
    if config.epsilon_anneal_steps <= 0:
        return config.epsilon_finish
    frac = min(max(t, 0) / config.epsilon_anneal_steps, 1.0)
    return config.epsilon_start + frac * (config.epsilon_finish - config.epsilon_start)


@dataclass
class Episode:
    """One recorded episode. Per-step arrays have ``T`` rows; observation and
    state arrays have ``T + 1`` rows (the state reached after the last step is
    kept for bootstrapping)."""

    actions: np.ndarray  # (T, n) int
    reward: np.ndarray  # (T,)
    terminated: np.ndarray  # (T,) bool, true terminal states only
    avail: np.ndarray  # (T + 1, n, u) bool
    inputs: dict[str, np.ndarray] = field(default_factory=dict)
    final_pol: float = 0.0

    @property
    def length(self) -> int:
        return len(self.reward)

    @property
    def n_agents(self) -> int:
        return self.actions.shape[1]

    @property
    def episode_return(self) -> float:
        return float(self.reward.sum())


@dataclass
class EpisodeBatch:
    """Episodes padded to a common length; ``mask[b, t]`` is 1 for real steps."""

    actions: torch.Tensor  # (B, T, n) long
    reward: torch.Tensor  # (B, T)
    terminated: torch.Tensor  # (B, T)
    mask: torch.Tensor  # (B, T)
    avail: torch.Tensor  # (B, T + 1, n, u) bool
    inputs: dict[str, torch.Tensor]

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode], dtype=torch.float32) -> "EpisodeBatch":
        T = max(e.length for e in episodes)
        B = len(episodes)
        n = episodes[0].n_agents
        if any(e.n_agents != n for e in episodes):
            raise ConfigurationError("cannot batch episodes with different team sizes")
        actions = np.zeros((B, T, n), dtype=np.int64)
        reward = np.zeros((B, T))
        terminated = np.zeros((B, T))
        mask = np.zeros((B, T))
        avail = np.ones((B, T + 1, n, N_ACTIONS), dtype=bool)
        inputs = {k: np.zeros((B, T + 1) + v.shape[1:], dtype=np.float64) for k, v in episodes[0].inputs.items()}
        for b, e in enumerate(episodes):
            L = e.length
            actions[b, :L] = e.actions
            reward[b, :L] = e.reward
            terminated[b, :L] = e.terminated
            mask[b, :L] = 1.0
            avail[b, : L + 1] = e.avail
            for k, v in e.inputs.items():
                inputs[k][b, : L + 1] = v
        return cls(
            torch.from_numpy(actions),
            torch.as_tensor(reward, dtype=dtype),
            torch.as_tensor(terminated, dtype=dtype),
            torch.as_tensor(mask, dtype=dtype),
            torch.from_numpy(avail),
            {k: torch.as_tensor(v, dtype=dtype) for k, v in inputs.items()},
        )

    @property
    def size(self) -> int:
        return self.actions.shape[0]

    @property
    def max_len(self) -> int:
        return self.actions.shape[1]


class ReplayBuffer:
    """FIFO store of whole episodes."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.storage: list[Episode] = []
        self.inserted = 0

    def __len__(self) -> int:
        return len(self.storage)

    def add(self, episode: Episode) -> None:
        if len(self.storage) < self.capacity:
            self.storage.append(episode)
        else:
            self.storage[self.inserted % self.capacity] = episode
        self.inserted += 1

    def can_sample(self, batch_size: int) -> bool:
        return len(self.storage) >= batch_size

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Episode]:
        # indices are drawn over the episodes present when the call starts
        idx = rng.choice(len(self.storage), size=batch_size, replace=False)
        return [self.storage[i] for i in idx]

    def clear(self) -> None:
        self.storage.clear()
        self.inserted = 0


def _step_inputs(env: SpreadEnv, keys: set[str]) -> dict[str, np.ndarray]:
    out = {}
    if "obs" in keys:
        out["obs"] = env.observations()
    if "state" in keys:
        out["state"] = env.state_matrix()
    if "obs_vec" in keys:
        out["obs_vec"] = env.observation_vectors()
    if "state_vec" in keys:
        out["state_vec"] = env.state_vector()
    return out


@torch.no_grad()
def collect_episodes(
    envs: Sequence[SpreadEnv],
    model: MultiAgentModel,
    epsilon: float,
    rng: np.random.Generator,
    keys: set[str] | None = None,
) -> list[Episode]:
    """Roll one episode in each environment, all in lock-step.

    Every agent acts on its own observation history through its own hidden
    state; the agent network is shared. ``epsilon = 0`` gives greedy play.
    """
    keys = set(keys or needed_inputs(model.family))
    agent_key = "obs" if model.spec.obs_kind == "graph" else "obs_vec"
    keys.add(agent_key)
    E = len(envs)
    n = envs[0].config.n
    T = envs[0].config.episode_len
    dtype = next(model.parameters()).dtype
    for env in envs:
        env.reset()
    hidden = model.agent.init_hidden(E, n)
    records = [{k: [] for k in keys} for _ in range(E)]
    actions = np.zeros((E, T, n), dtype=np.int64)
    rewards = np.zeros((E, T))
    avail = np.ones((E, n, N_ACTIONS), dtype=bool)
    for t in range(T + 1):
        step_inputs = [_step_inputs(env, keys) for env in envs]
        for rec, si in zip(records, step_inputs):
            for k, v in si.items():
                rec[k].append(v)
        if t == T:
            break
        obs = torch.as_tensor(np.stack([si[agent_key] for si in step_inputs]), dtype=dtype)
        q, _, hidden = model.agent(obs, hidden)
        acts = select_actions(q.reshape(E * n, -1).numpy(), avail.reshape(E * n, -1), epsilon, rng).reshape(E, n)
        actions[:, t] = acts
        for e, env in enumerate(envs):
            rewards[e, t], _ = env.step(acts[e])
    episodes = []
    for e, env in enumerate(envs):
        episodes.append(
            Episode(
                actions=actions[e],
                reward=rewards[e],
                # time-limit ends are truncations, not terminal states
                terminated=np.zeros(T, dtype=bool),
                avail=np.ones((T + 1, n, N_ACTIONS), dtype=bool),
                inputs={k: np.asarray(v, dtype=np.float32) for k, v in records[e].items()},
                final_pol=env.pol(),
            )
        )
    return episodes


def collect_episode(env: SpreadEnv, model: MultiAgentModel, epsilon: float, rng: np.random.Generator) -> Episode:
    return collect_episodes([env], model, epsilon, rng)[0]


def td_lambda_targets(rewards, terminated, target_max_q, gamma: float, td_lambda: float, mask=None) -> torch.Tensor:
    """TD(lambda) returns by backward recursion over the last axis.

    ``target_max_q[..., t]`` is the target value of the state reached after
    step ``t``; it is ignored where ``terminated`` is set. At the last valid
    step the return bootstraps fully from that value:

        G_t = r_t + gamma * ((1 - lambda) * V_{t+1} + lambda * G_{t+1}),
        G_T := V_T (0 when terminal).
    """
    r = torch.as_tensor(rewards)
    dtype = r.dtype if r.is_floating_point() else torch.float64
    r = r.to(dtype)
    term = torch.as_tensor(terminated).to(dtype)
    v = torch.as_tensor(target_max_q).to(dtype) * (1.0 - term)
    m = torch.ones_like(r) if mask is None else torch.as_tensor(mask).to(dtype)
    T = r.shape[-1]
    out = torch.zeros_like(r)
    g_next = torch.zeros_like(r[..., 0])
    for t in range(T - 1, -1, -1):
        last = m[..., t + 1] == 0 if t + 1 < T else torch.ones_like(m[..., t], dtype=torch.bool)
        follow = torch.where(last, v[..., t], g_next)
        g = r[..., t] + gamma * ((1.0 - td_lambda) * v[..., t] + td_lambda * follow)
        g = g * m[..., t]
        out[..., t] = g
        g_next = g
    return out


def unroll_agents(model: MultiAgentModel, batch: EpisodeBatch):
    """Run the shared agent network over all ``T + 1`` steps.

    Returns ``(agent_q (B, T+1, n, u), hidden (B, T+1, n, h))``.
    """
    B, T = batch.size, batch.max_len
    n = batch.actions.shape[-1]
    obs = model.agent_input(batch.inputs.get("obs"), batch.inputs.get("obs_vec"))
    hidden = model.agent.init_hidden(B, n)
    qs, hs = [], []
    for t in range(T + 1):
        q, _, hidden = model.agent(obs[:, t], hidden)
        qs.append(q)
        hs.append(hidden)
    return torch.stack(qs, dim=1), torch.stack(hs, dim=1)


def unroll_mixer(model: MultiAgentModel, batch: EpisodeBatch, chosen: torch.Tensor, hidden: torch.Tensor):
    """Mix ``chosen (B, S, n)`` step by step, carrying the mixer's recurrent
    state; returns ``q_tot (B, S)``."""
    state = model.mixer_input(batch.inputs.get("state"), batch.inputs.get("state_vec"))
    rec = model.mixer.init_recurrent(batch.size)
    totals = []
    for t in range(chosen.shape[1]):
        q_tot, rec = model.mixer(chosen[:, t], hidden[:, t], state[:, t], rec)
        totals.append(q_tot)
    return torch.stack(totals, dim=1)


def taken_action_values(agent_q: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    T = actions.shape[1]
    return agent_q[:, :T].gather(-1, actions.unsqueeze(-1)).squeeze(-1)


class Learner:
    """Owns the online/target networks and the optimizer."""

    def __init__(self, model: MultiAgentModel, config: TrainConfig):
        self.model = model
        self.config = config
        self.target = copy.deepcopy(model)
        for p in self.target.parameters():
            p.requires_grad_(False)
        self.params = model.params()
        self.target_params = self.target.params()
        self.opt: OptimizerState = make_optimizer(config.optimizer, config.lr, config.grad_clip)
        self.updates = 0
        self.last_sync_episode = 0
        self.last_grad_norm = 0.0

    def targets(self, batch: EpisodeBatch, online_q: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        with torch.no_grad():
            target_q, target_hidden = unroll_agents(self.target, batch)
            if cfg.double_q:
                q_sel = online_q.detach().masked_fill(~batch.avail, -float("inf"))
            else:
                q_sel = target_q.masked_fill(~batch.avail, -float("inf"))
            best = q_sel.argmax(dim=-1, keepdim=True)
            best_q = target_q.gather(-1, best).squeeze(-1)  # (B, T+1, n)
            target_tot = unroll_mixer(self.target, batch, best_q, target_hidden)
            return td_lambda_targets(
                batch.reward, batch.terminated, target_tot[:, 1:], cfg.gamma, cfg.td_lambda, batch.mask
            )

    def loss(self, batch: EpisodeBatch) -> torch.Tensor:
        agent_q, hidden = unroll_agents(self.model, batch)
        if not self.config.mixer_grad_to_agents:
            hidden = hidden.detach()
        chosen = taken_action_values(agent_q, batch.actions)
        q_tot = unroll_mixer(self.model, batch, chosen, hidden[:, : batch.max_len])
        targets = self.targets(batch, agent_q)
        err = (q_tot - targets) * batch.mask
        return (err**2).sum() / batch.mask.sum()

    def update(self, batch: EpisodeBatch) -> float:
        loss = self.loss(batch)
        if not torch.isfinite(loss):
            raise NumericalError(
                f"non-finite loss {loss.item()} at update {self.updates} "
                f"(rewards in [{batch.reward.min():.3f}, {batch.reward.max():.3f}])"
            )
        backprop(loss)
        self.last_grad_norm = optimizer_step(self.params, self.opt)
        self.updates += 1
        return loss.item()

    def sync_target(self) -> None:
        self.target_params.copy_from(self.params)

    def maybe_sync(self, episodes: int) -> bool:
        if episodes - self.last_sync_episode >= self.config.target_update_interval:
            self.sync_target()
            self.last_sync_episode = episodes
            return True
        return False
