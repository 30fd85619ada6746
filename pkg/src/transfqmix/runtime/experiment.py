"""Dispatch of the experiment commands (train, eval, zero-shot, ...)."""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from ..models import ABLATION_FAMILIES, default_learning_setup
from ..numeric_core import ConfigurationError, NumericalError
from .checkpoint import CheckpointError, load_checkpoint
from .config import ExperimentConfig, write_config_file
from .trainer import model_from_checkpoint, train_stage

log = logging.getLogger(__name__)

COMMANDS = ("train", "eval", "zero-shot", "curriculum", "fine-tune", "ablate")


def ablation_configs(base: ExperimentConfig) -> list[ExperimentConfig]:
    """The four ablation families built from one base config.

    Each family gets its own optimizer defaults and output directory.
    """
    root = base.resolved_out_dir()
    out = []
    for fam in ABLATION_FAMILIES:
        opt, lr, lam = default_learning_setup(fam)
        out.append(
            replace(
                base,
                family=fam,
                train=replace(base.train, optimizer=opt, lr=lr, td_lambda=lam),
                out_dir=str(root / fam),
            )
        )
    return out


def _train(cfg: ExperimentConfig, load: str | None) -> dict:
    out = cfg.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(cfg, out / "config.ini")
    if not load:
        return train_stage(cfg, out).summary()
    from ..learner import Learner

    ckpt = load_checkpoint(load)
    model, _ = model_from_checkpoint(ckpt, cfg.n_agents)
    learner = Learner(model, cfg.train)
    if ckpt.optimizer is not None:
        learner.opt = ckpt.optimizer
    learner.updates = int(ckpt.counters.get("updates", 0))
    done = int(ckpt.counters.get("env_steps", 0))
    res = train_stage(cfg, out, model=model, learner=learner, epsilon_offset=done, start_steps=done)
    return res.summary()


def run_experiment(
    command: str,
    cfg: ExperimentConfig,
    load: Sequence[str] = (),
    scenarios: Sequence[int] = (),
    episodes: int | None = None,
) -> int:
    """Run one command; returns a process exit status."""
    from ..eval_transfer.evaluation import evaluate_policy, write_grid, zero_shot_matrix
    from ..eval_transfer.transfer import fine_tune, run_curriculum

    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}; choose from {COMMANDS}")
    out = cfg.resolved_out_dir()
    try:
        if command == "train":
            summary = _train(cfg, load[0] if load else None)
            log.info("training finished: %s", {k: summary[k] for k in ("env_steps", "best_eval_pol")})
        elif command == "ablate":
            for sub in ablation_configs(cfg):
                log.info("ablation run: %s -> %s", sub.family, sub.out_dir)
                _train(sub, None)
        elif command == "curriculum":
            out.mkdir(parents=True, exist_ok=True)
            write_config_file(cfg, out / "config.ini")
            run_curriculum(cfg, out)
        elif command == "fine-tune":
            if not load:
                raise ConfigurationError("fine-tune needs --load <checkpoint>")
            res = fine_tune(load[0], cfg.n_agents, cfg.train.total_env_steps, out, seed=cfg.seed, deterministic=cfg.deterministic)
            log.info("fine-tune: zero-shot POL %.3f, peak-dip %s", res.zero_shot_pol, res.peak_dip)
        else:
            if not load:
                raise ConfigurationError(f"{command} needs --load <checkpoint>")
            n_eps = episodes or (cfg.eval_episodes if command == "eval" else cfg.final_eval_episodes)
            sizes = list(scenarios) or [cfg.n_agents]
            out.mkdir(parents=True, exist_ok=True)
            if command == "eval":
                model, ckcfg = model_from_checkpoint(load[0], sizes[0])
                rep = evaluate_policy(model, ckcfg.scenario(sizes[0]), n_eps, cfg.seed)
                (out / "eval.json").write_text(json.dumps(rep.to_dict(per_episode=True), indent=2) + "\n")
                print(f"spread:{sizes[0]} POL {rep.mean_pol:.4f} return {rep.mean_return:.3f} over {n_eps} episodes")
            else:
                models, base_env = {}, None
                for path in load:
                    model, ckcfg = model_from_checkpoint(path)
                    base_env = base_env or ckcfg.env
                    models[f"{ckcfg.family}({ckcfg.n_agents}v{ckcfg.n_agents}):{Path(path).stem}"] = model
                grid = zero_shot_matrix(models, sizes, n_eps, base=base_env, seed=cfg.seed)
                write_grid(grid, out / "zero_shot.tsv")
                (out / "zero_shot.json").write_text(json.dumps(grid, indent=2) + "\n")
                print((out / "zero_shot.tsv").read_text(), end="")
    except (ConfigurationError, CheckpointError) as exc:
        log.error("%s", exc)
        return 2
    except NumericalError as exc:
        log.error("training aborted: %s", exc)
        return 3
    return 0
