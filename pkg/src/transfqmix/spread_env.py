"""Cooperative navigation ("Spread"): n agents must cover n landmarks.

The world is a 2-D damped point-mass system. Observations and the global
state are exposed both as entity matrices (one row per agent or landmark)
and as the flat vectors that recurrent baselines consume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import IO

import numpy as np

from .numeric_core import ConfigurationError, UsageError

N_ACTIONS = 5
# noop, left, right, up, down
ACTION_DIRECTIONS = np.array([[0, 0], [-1, 0], [1, 0], [0, 1], [0, -1]], dtype=np.float64)

OBS_FEATURES = ("pos_x", "pos_y", "is_self", "is_agent")
STATE_FEATURES = ("pos_x", "pos_y", "vel_x", "vel_y", "is_agent")


@dataclass(frozen=True)
class SpreadConfig:
    n: int = 3
    episode_len: int = 25
    dt: float = 0.1
    damping: float = 0.25
    agent_radius: float = 0.15
    action_force: float = 5.0
    collision_penalty: float = 1.0
    pol_threshold: float = 0.3
    init_extent: float = 1.0
    graph_features: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError("spread needs at least 2 agents")
        if self.episode_len < 1:
            raise ConfigurationError("episode_len must be positive")
        for name in ("dt", "damping", "agent_radius", "action_force", "pol_threshold", "init_extent"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.collision_penalty < 0:
            raise ConfigurationError("collision_penalty must be non-negative")

    @property
    def n_entities(self) -> int:
        return 2 * self.n

    @property
    def obs_features(self) -> int:
        return 4 if self.graph_features else 2

    @property
    def state_features(self) -> int:
        return 5 if self.graph_features else 4

    @property
    def obs_vector_dim(self) -> int:
        return 4 + 2 * self.n + 2 * (self.n - 1)

    @property
    def state_vector_dim(self) -> int:
        return self.n * self.obs_vector_dim


@dataclass
class WorldState:
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    landmark_pos: np.ndarray
    step_index: int = 0

    def copy(self) -> "WorldState":
        return WorldState(self.agent_pos.copy(), self.agent_vel.copy(), self.landmark_pos.copy(), self.step_index)


def reset(config: SpreadConfig, rng: np.random.Generator) -> WorldState:
    e = config.init_extent
    agent_pos = rng.uniform(-e, e, size=(config.n, 2))
    landmark_pos = rng.uniform(-e, e, size=(config.n, 2))
    return WorldState(agent_pos, np.zeros((config.n, 2)), landmark_pos, 0)


def coverage_distance(state: WorldState) -> float:
    """Sum over landmarks of the distance to the closest agent."""
    d = np.linalg.norm(state.landmark_pos[:, None, :] - state.agent_pos[None, :, :], axis=-1)
    return float(d.min(axis=1).sum())


def collision_count(state: WorldState, config: SpreadConfig) -> int:
    d = np.linalg.norm(state.agent_pos[:, None, :] - state.agent_pos[None, :, :], axis=-1)
    iu = np.triu_indices(config.n, k=1)
    return int((d[iu] < 2 * config.agent_radius).sum())


def reward_of(state: WorldState, config: SpreadConfig) -> float:
    return -coverage_distance(state) - config.collision_penalty * collision_count(state, config)


def step(state: WorldState, joint_action, config: SpreadConfig) -> tuple[WorldState, float, bool]:
    if state.step_index >= config.episode_len:
        raise UsageError("step() called on a finished episode")
    actions = np.asarray(joint_action, dtype=np.int64)
    if actions.shape != (config.n,) or actions.min() < 0 or actions.max() >= N_ACTIONS:
        raise ConfigurationError(f"joint action must be {config.n} indices in [0, {N_ACTIONS})")
    force = config.action_force * ACTION_DIRECTIONS[actions]
    vel = state.agent_vel * (1.0 - config.damping) + force * config.dt
    pos = state.agent_pos + vel * config.dt
    new = WorldState(pos, vel, state.landmark_pos.copy(), state.step_index + 1)
    return new, reward_of(new, config), new.step_index == config.episode_len


def build_observation_matrix(state: WorldState, agent_index: int, config: SpreadConfig) -> np.ndarray:
    """Entity rows (agents, then landmarks) relative to ``agent_index``."""
    if not 0 <= agent_index < config.n:
        raise UsageError(f"agent index {agent_index} out of range")
    return build_all_observation_matrices(state, config)[agent_index]


def build_all_observation_matrices(state: WorldState, config: SpreadConfig) -> np.ndarray:
    """Observation matrices of every agent, shape ``(n, 2n, z)``."""
    n = config.n
    ents = np.concatenate([state.agent_pos, state.landmark_pos])  # (2n, 2)
    rel = ents[None, :, :] - state.agent_pos[:, None, :]  # (n, 2n, 2)
    if not config.graph_features:
        return rel
    out = np.zeros((n, 2 * n, 4))
    out[:, :, :2] = rel
    out[np.arange(n), np.arange(n), 2] = 1.0
    out[:, :n, 3] = 1.0
    return out


def build_state_matrix(state: WorldState, config: SpreadConfig | None = None) -> np.ndarray:
    n = state.agent_pos.shape[0]
    graph = config is None or config.graph_features
    out = np.zeros((2 * n, 5 if graph else 4))
    out[:n, :2] = state.agent_pos
    out[n:, :2] = state.landmark_pos
    out[:n, 2:4] = state.agent_vel
    if graph:
        out[:n, 4] = 1.0
    return out


def build_observation_vectors(state: WorldState, config: SpreadConfig) -> np.ndarray:
    """Flat per-agent observation: own velocity and position, landmark and
    teammate positions relative to the agent. Shape ``(n, obs_vector_dim)``."""
    n = config.n
    rows = []
    for a in range(n):
        others = np.delete(np.arange(n), a)
        rows.append(
            np.concatenate(
                [
                    state.agent_vel[a],
                    state.agent_pos[a],
                    (state.landmark_pos - state.agent_pos[a]).ravel(),
                    (state.agent_pos[others] - state.agent_pos[a]).ravel(),
                ]
            )
        )
    return np.stack(rows)


def build_state_vector(state: WorldState, config: SpreadConfig) -> np.ndarray:
    return build_observation_vectors(state, config).ravel()


def percent_occupied_landmarks(state: WorldState, threshold: float = 0.3) -> float:
    if threshold <= 0:
        raise ConfigurationError("threshold must be positive")
    d = np.linalg.norm(state.landmark_pos[:, None, :] - state.agent_pos[None, :, :], axis=-1)
    return float((d.min(axis=1) < threshold).mean())


@dataclass
class SpreadEnv:
    """Stateful wrapper owning one episode at a time."""

    config: SpreadConfig
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    state: WorldState | None = None

    def reset(self) -> WorldState:
        self.state = reset(self.config, self.rng)
        return self.state

    def step(self, joint_action) -> tuple[float, bool]:
        if self.state is None:
            raise UsageError("reset() must be called before step()")
        self.state, reward, done = step(self.state, joint_action, self.config)
        return reward, done

    def observations(self) -> np.ndarray:
        return build_all_observation_matrices(self.state, self.config)

    def state_matrix(self) -> np.ndarray:
        return build_state_matrix(self.state, self.config)

    def observation_vectors(self) -> np.ndarray:
        return build_observation_vectors(self.state, self.config)

    def state_vector(self) -> np.ndarray:
        return build_state_vector(self.state, self.config)

    def pol(self) -> float:
        return percent_occupied_landmarks(self.state, self.config.pol_threshold)

    def with_agents(self, n: int) -> "SpreadEnv":
        return SpreadEnv(replace(self.config, n=n), self.rng)


def dump_trajectory_step(fh: IO[str], episode: int, state: WorldState, reward: float, pol: float) -> None:
    """Append one JSON line describing a step, for offline plotting."""
    record = {
        "episode": episode,
        "step": state.step_index,
        "agents": state.agent_pos.round(6).tolist(),
        "landmarks": state.landmark_pos.round(6).tolist(),
        "reward": round(float(reward), 6),
        "pol": pol,
    }
    fh.write(json.dumps(record) + "\n")
