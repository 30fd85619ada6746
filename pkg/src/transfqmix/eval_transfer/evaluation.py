"""Greedy evaluation and zero-shot transfer grids."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np
import torch

from ..models import MultiAgentModel
from ..runtime.checkpoint import TransferIncompatibleError
from ..spread_env import ACTION_DIRECTIONS, N_ACTIONS, SpreadConfig, SpreadEnv


@dataclass
class EvalReport:
    scenario: str
    episodes: int
    mean_pol: float
    mean_return: float
    pols: list[float] = field(default_factory=list)
    returns: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.episodes <= 0:
            raise ValueError("an evaluation needs at least one episode")

    def to_dict(self, per_episode: bool = False) -> dict:
        d = {"scenario": self.scenario, "episodes": self.episodes, "mean_pol": self.mean_pol, "mean_return": self.mean_return}
        if per_episode:
            d["pols"] = self.pols
            d["returns"] = self.returns
        return d


class Policy(Protocol):
    def reset(self, envs: Sequence[SpreadEnv]) -> None: ...

    def act(self, envs: Sequence[SpreadEnv]) -> np.ndarray: ...


class ModelPolicy:
    """Greedy decentralised play with the shared agent network."""

    def __init__(self, model: MultiAgentModel):
        self.model = model
        self.hidden = None

    def check_compatible(self, scenario: SpreadConfig) -> None:
        agent = self.model.agent
        if self.model.spec.obs_kind == "graph":
            need, have = scenario.obs_features, agent.n_features
        else:
            need, have = scenario.obs_vector_dim, agent.input_dim
        if need != have:
            raise TransferIncompatibleError(
                f"{self.model.family} agent takes {have} input features; spread:{scenario.n} provides {need}"
            )

    def reset(self, envs: Sequence[SpreadEnv]) -> None:
        self.hidden = self.model.agent.init_hidden(len(envs), envs[0].config.n)

    @torch.no_grad()
    def act(self, envs: Sequence[SpreadEnv]) -> np.ndarray:
        if self.model.spec.obs_kind == "graph":
            obs = np.stack([e.observations() for e in envs])
        else:
            obs = np.stack([e.observation_vectors() for e in envs])
        dtype = next(self.model.parameters()).dtype
        q, _, self.hidden = self.model.agent(torch.as_tensor(obs, dtype=dtype), self.hidden)
        return q.argmax(dim=-1).numpy()


class UniformRandomPolicy:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def reset(self, envs):
        pass

    def act(self, envs):
        return self.rng.integers(0, N_ACTIONS, size=(len(envs), envs[0].config.n))


def best_assignment(agent_pos: np.ndarray, landmark_pos: np.ndarray) -> tuple[int, ...]:
    """Landmark index per agent minimising total distance (brute force)."""
    n = len(agent_pos)
    d = np.linalg.norm(agent_pos[:, None] - landmark_pos[None], axis=-1)
    return min(itertools.permutations(range(n)), key=lambda p: d[np.arange(n), p].sum())


class ScriptedAssignmentPolicy:
    """Centralised oracle: fix the optimal agent-to-landmark matching at the
    start of the episode, then each agent takes the action whose one-step
    predicted position is closest to its landmark."""

    def __init__(self):
        self.targets: list[np.ndarray] = []

    def reset(self, envs):
        self.targets = [e.state.landmark_pos[list(best_assignment(e.state.agent_pos, e.state.landmark_pos))] for e in envs]

    def act(self, envs):
        out = []
        for env, target in zip(envs, self.targets):
            c, s = env.config, env.state
            vel = s.agent_vel[:, None] * (1 - c.damping) + c.action_force * ACTION_DIRECTIONS[None] * c.dt
            nxt = s.agent_pos[:, None] + vel * c.dt  # (n, u, 2)
            out.append(np.linalg.norm(nxt - target[:, None], axis=-1).argmin(axis=1))
        return np.stack(out)


def evaluate_policy(
    policy: Policy | MultiAgentModel,
    scenario: SpreadConfig,
    episodes: int,
    seed: int = 0,
    chunk: int = 250,
) -> EvalReport:
    """Play ``episodes`` greedy episodes; POL is measured at episode end.

    Episode ``i`` uses an RNG spawned from ``seed``, so reports are
    reproducible and independent of ``chunk``. Parameters are never changed.
    """
    if isinstance(policy, MultiAgentModel):
        policy = ModelPolicy(policy)
    if isinstance(policy, ModelPolicy):
        policy.check_compatible(scenario)
    seeds = np.random.SeedSequence(seed).spawn(episodes)
    pols, returns = [], []
    for start in range(0, episodes, chunk):
        envs = [SpreadEnv(scenario, np.random.default_rng(s)) for s in seeds[start : start + chunk]]
        for env in envs:
            env.reset()
        policy.reset(envs)
        total = np.zeros(len(envs))
        for _ in range(scenario.episode_len):
            acts = policy.act(envs)
            for i, env in enumerate(envs):
                r, _ = env.step(acts[i])
                total[i] += r
        pols.extend(env.pol() for env in envs)
        returns.extend(total.tolist())
    return EvalReport(
        scenario=f"spread:{scenario.n}",
        episodes=episodes,
        mean_pol=float(np.mean(pols)),
        mean_return=float(np.mean(returns)),
        pols=[float(p) for p in pols],
        returns=returns,
    )


def zero_shot_matrix(
    models: Mapping[str, MultiAgentModel],
    scenarios: Sequence[int],
    episodes: int,
    base: SpreadConfig = SpreadConfig(),
    seed: int = 0,
) -> dict[str, dict[int, float]]:
    """Mean POL of every model on every team size: ``grid[label][n]``."""
    grid: dict[str, dict[int, float]] = {}
    for label, model in models.items():
        policy = ModelPolicy(model)
        for n in scenarios:
            policy.check_compatible(replace(base, n=n))
        grid[label] = {n: evaluate_policy(policy, replace(base, n=n), episodes, seed).mean_pol for n in scenarios}
    return grid


def write_grid(grid: Mapping[str, Mapping[int, float]], path: str | Path) -> None:
    """Tab-separated table: one row per model, one column per team size."""
    cols = sorted({n for row in grid.values() for n in row})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["model"] + [f"{n}v{n}" for n in cols])
        for label, row in grid.items():
            w.writerow([label] + [f"{row[n]:.4f}" if n in row else "" for n in cols])
