"""Training loop: collection, replay, updates, evaluation and checkpoints.

Seeding: every random stream is derived from the master seed through
``numpy.random.SeedSequence`` with a fixed spawn key, so a training stage is
reproducible from ``(config, seed, stage)`` alone.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from ..learner import EpisodeBatch, Learner, ReplayBuffer, collect_episodes, epsilon_at
from ..models import MultiAgentModel
from ..numeric_core import ConfigurationError
from ..spread_env import SpreadConfig, SpreadEnv
from .checkpoint import Checkpoint, TransferIncompatibleError, check_transfer_compatible, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .metrics import MetricsWriter

log = logging.getLogger(__name__)

# spawn-key streams under the master seed
_INIT, _ENVS, _ACTIONS, _REPLAY, _EVAL = range(5)


def stream_seed(seed: int, stage: int, stream: int, *extra: int) -> list[int]:
    return [seed, stage, stream, *extra]


def eval_seed(seed: int, stage: int, index: int) -> list[int]:
    """Seed of the ``index``-th evaluation point of a stage."""
    return stream_seed(seed, stage, _EVAL, index)


def set_deterministic(enabled: bool) -> None:
    torch.use_deterministic_algorithms(enabled)
    if enabled:
        torch.set_num_threads(1)


def build_model(cfg: ExperimentConfig, n: int | None = None, seed: int | None = None) -> MultiAgentModel:
    torch.manual_seed(int(np.random.SeedSequence(stream_seed(cfg.seed if seed is None else seed, 0, _INIT)).generate_state(1)[0]))
    return MultiAgentModel(
        cfg.family, cfg.scenario(n), cfg.transformer, cfg.rnn_hidden, cfg.mixing_embed, cfg.hypernet_hidden
    )


def checkpoint_extra(cfg: ExperimentConfig, n: int) -> dict[str, Any]:
    env = cfg.scenario(n)
    return {"family": cfg.family, "n_agents": n, "obs_features": env.obs_features, "state_features": env.state_features}


def model_from_checkpoint(ckpt: Checkpoint | str | Path, n: int | None = None) -> tuple[MultiAgentModel, ExperimentConfig]:
    """Rebuild the network from a checkpoint, optionally for another team size."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    cfg = ExperimentConfig.from_dict(ckpt.config)
    target = cfg.scenario(n)
    check_transfer_compatible(ckpt, target.obs_features, target.state_features)
    model = MultiAgentModel(cfg.family, target, cfg.transformer, cfg.rnn_hidden, cfg.mixing_embed, cfg.hypernet_hidden)
    try:
        model.params().load(ckpt.params)
    except ConfigurationError as exc:
        raise TransferIncompatibleError(
            f"{cfg.family} checkpoint trained on spread:{cfg.n_agents} cannot drive spread:{target.n}: {exc}"
        ) from None
    return model, cfg


@dataclass
class StageResult:
    model: MultiAgentModel
    learner: Learner
    out_dir: Path
    buffer: ReplayBuffer
    env_steps: int = 0
    episodes: int = 0
    curve: list[tuple[int, float]] = field(default_factory=list)  # (env_steps, eval POL)
    best_pol: float = -1.0
    best_steps: int = 0
    final_pol: float | None = None

    def summary(self) -> dict[str, Any]:
        return {
            "env_steps": self.env_steps,
            "episodes": self.episodes,
            "updates": self.learner.updates,
            "best_eval_pol": self.best_pol,
            "best_env_steps": self.best_steps,
            "final_eval_pol": self.final_pol,
            "curve": [list(p) for p in self.curve],
        }


def _save(cfg, learner, n, path, counters, rngs, include_optimizer=True):
    ckpt = Checkpoint(
        config=cfg.to_dict(),
        params=learner.params.snapshot(),
        optimizer=learner.opt,
        counters=counters,
        rng_state={k: r.bit_generator.state for k, r in rngs.items()},
        extra=checkpoint_extra(cfg, n),
    )
    save_checkpoint(ckpt, path, include_optimizer=include_optimizer)


def train_stage(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    *,
    n: int | None = None,
    steps: int | None = None,
    stage: int = 0,
    model: MultiAgentModel | None = None,
    learner: Learner | None = None,
    buffer: ReplayBuffer | None = None,
    epsilon_offset: int = 0,
    start_steps: int = 0,
) -> StageResult:
    """Train one stage on ``spread:n`` for ``steps`` environment steps.

    ``model``/``learner`` carry parameters (and optimizer state) over from an
    earlier stage or checkpoint. Without ``buffer`` the replay buffer starts
    empty.
    The epsilon schedule is evaluated at ``local_steps + epsilon_offset``.
    """
    from ..eval_transfer.evaluation import evaluate_policy  # avoids an import cycle

    n = cfg.n_agents if n is None else n
    steps = cfg.train.total_env_steps if steps is None else steps
    env_cfg: SpreadConfig = cfg.scenario(n)
    tc = cfg.train
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    set_deterministic(cfg.deterministic)

    if model is None:
        model = build_model(cfg, n)
    if learner is None:
        learner = Learner(model, tc)
    elif learner.model is not model:
        raise ConfigurationError("learner does not own the given model")
    learner.config = tc
    learner.last_sync_episode = 0

    rngs = {
        "envs": np.random.default_rng(stream_seed(cfg.seed, stage, _ENVS)),
        "actions": np.random.default_rng(stream_seed(cfg.seed, stage, _ACTIONS)),
        "replay": np.random.default_rng(stream_seed(cfg.seed, stage, _REPLAY)),
    }
    envs = [SpreadEnv(env_cfg, rngs["envs"]) for _ in range(tc.episodes_per_update)]
    buffer = ReplayBuffer(tc.buffer_size) if buffer is None else buffer
    metrics = MetricsWriter(out / "metrics.csv")
    res = StageResult(model, learner, out, buffer, env_steps=start_steps)
    t0 = time.perf_counter()
    eval_index = 0
    losses: list[float] = []
    returns: list[float] = []

    def counters():
        return {"env_steps": res.env_steps, "episodes": res.episodes, "updates": learner.updates}

    def run_eval() -> tuple[float, float]:
        nonlocal eval_index
        rep = evaluate_policy(model, env_cfg, cfg.eval_episodes, eval_seed(cfg.seed, stage, eval_index))
        eval_index += 1
        res.curve.append((res.env_steps, rep.mean_pol))
        if rep.mean_pol > res.best_pol:
            res.best_pol, res.best_steps = rep.mean_pol, res.env_steps
            _save(cfg, learner, n, out / "best.ckpt", counters(), rngs, include_optimizer=False)
        return rep.mean_pol, rep.mean_return

    def emit(eval_result, eps):
        row = {
            "wall_time": None if cfg.deterministic else round(time.perf_counter() - t0, 3),
            "env_steps": res.env_steps,
            "episodes": res.episodes,
            "loss": float(np.mean(losses)) if losses else None,
            "epsilon": eps,
            "train_return_mean": float(np.mean(returns)) if returns else None,
            "eval_pol": eval_result[0] if eval_result else None,
            "eval_return_mean": eval_result[1] if eval_result else None,
        }
        metrics.emit(row)
        losses.clear()
        returns.clear()

    local = 0
    emit(run_eval(), epsilon_at(epsilon_offset, tc))
    next_log = cfg.log_interval
    next_eval = cfg.eval_interval
    next_ckpt = cfg.checkpoint_interval or None
    while local < steps:
        eps = epsilon_at(local + epsilon_offset, tc)
        batch_eps = collect_episodes(envs, model, eps, rngs["actions"])
        for ep in batch_eps:
            buffer.add(ep)
            returns.append(ep.episode_return)
            local += ep.length
            res.env_steps += ep.length
            res.episodes += 1
        if buffer.can_sample(tc.batch_size):
            batch = EpisodeBatch.from_episodes(buffer.sample(tc.batch_size, rngs["replay"]))
            losses.append(learner.update(batch))
        learner.maybe_sync(res.episodes)
        evaluated = None
        if local >= next_eval or local >= steps:
            evaluated = run_eval()
            while next_eval <= local:
                next_eval += cfg.eval_interval
        if evaluated or local >= next_log:
            emit(evaluated, eps)
            while next_log <= local:
                next_log += cfg.log_interval
        if next_ckpt and local >= next_ckpt:
            _save(cfg, learner, n, out / f"step_{res.env_steps}.ckpt", counters(), rngs, include_optimizer=False)
            next_ckpt += cfg.checkpoint_interval

    _save(cfg, learner, n, out / "final.ckpt", counters(), rngs)
    if cfg.final_eval_episodes > 0:
        res.final_pol = evaluate_policy(model, env_cfg, cfg.final_eval_episodes, eval_seed(cfg.seed, stage, 10_000)).mean_pol
    summary = {
        "family": cfg.family,
        "scenario": f"spread:{n}",
        "seed": cfg.seed,
        "stage": stage,
        "parameters": learner.params.count(),
        **res.summary(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("stage %d on spread:%d done: best POL %.3f at %d steps", stage, n, res.best_pol, res.best_steps)
    return res

