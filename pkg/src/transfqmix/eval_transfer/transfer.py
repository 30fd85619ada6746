"""Curriculum training across team sizes and fine-tuning of checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from ..learner import Learner
from ..models import family_spec
from ..numeric_core import ConfigurationError
from ..runtime.checkpoint import Checkpoint, TransferIncompatibleError, load_checkpoint
from ..runtime.config import ExperimentConfig
from ..runtime.trainer import StageResult, build_model, model_from_checkpoint, train_stage


def entity_count_invariant(family: str) -> bool:
    """Whether one parameter set serves every team size."""
    spec = family_spec(family)
    return spec.agent == "transformer" and spec.mixer == "transformer"


def check_stage_widths(cfg: ExperimentConfig, sizes: Sequence[int]) -> None:
    widths = {(cfg.scenario(n).obs_features, cfg.scenario(n).state_features) for n in sizes}
    if len(widths) > 1:
        raise TransferIncompatibleError(f"stages disagree on entity feature widths: {sorted(widths)}")
    if len(set(sizes)) > 1 and not entity_count_invariant(cfg.family):
        raise TransferIncompatibleError(
            f"{cfg.family} has team-size dependent parameters; it cannot train on sizes {sorted(set(sizes))}"
        )


@dataclass
class CurriculumResult:
    stages: list[StageResult]
    reports: list[dict[str, Any]] = field(default_factory=list)

    @property
    def model(self):
        return self.stages[-1].model


def run_curriculum(
    cfg: ExperimentConfig, out_dir: str | Path, stages: Sequence[tuple[int, int]] | None = None
) -> CurriculumResult:
    """Train stage after stage, carrying parameters and optimizer state.

    Every stage writes its own directory ``stage<k>_spread<n>`` with metrics,
    checkpoints and summary. All widths are checked before any training.
    """
    stages = list(stages or cfg.curriculum or [(cfg.n_agents, cfg.train.total_env_steps)])
    if not stages:
        raise ConfigurationError("empty curriculum")
    sizes = [n for n, _ in stages]
    check_stage_widths(cfg, sizes)
    if not cfg.flush_buffer_between_stages and len(set(sizes)) > 1:
        raise ConfigurationError("keeping the replay buffer across stages needs one team size for all stages")
    out = Path(out_dir)
    model = build_model(cfg, sizes[0])
    learner = Learner(model, cfg.train)
    buffer = None
    done = 0
    result = CurriculumResult([])
    for k, (n, steps) in enumerate(stages):
        res = train_stage(
            cfg,
            out / f"stage{k}_spread{n}",
            n=n,
            steps=steps,
            stage=k,
            model=model,
            learner=learner,
            buffer=None if cfg.flush_buffer_between_stages else buffer,
            epsilon_offset=0 if cfg.restart_epsilon_each_stage else done,
            start_steps=done,
        )
        buffer = res.buffer
        done = res.env_steps
        result.stages.append(res)
        result.reports.append({"stage": k, "scenario": f"spread:{n}", **res.summary()})
    (out / "curriculum.json").write_text(json.dumps(result.reports, indent=2) + "\n")
    return result


@dataclass
class FineTuneResult:
    stage: StageResult
    curve: list[tuple[int, float]]

    @property
    def zero_shot_pol(self) -> float:
        return self.curve[0][1]

    @property
    def peak_dip(self) -> float | None:
        """First eval POL minus the minimum of the next three (positive = dip)."""
        if len(self.curve) < 2:
            return None
        return self.curve[0][1] - min(p for _, p in self.curve[1:4])

    def to_dict(self) -> dict[str, Any]:
        return {"zero_shot_pol": self.zero_shot_pol, "peak_dip": self.peak_dip, **self.stage.summary()}


def fine_tune(
    checkpoint: Checkpoint | str | Path,
    n: int,
    steps: int,
    out_dir: str | Path,
    seed: int | None = None,
    epsilon_start: float | None = None,
    deterministic: bool | None = None,
) -> FineTuneResult:
    """Continue training a checkpoint on ``spread:n`` with an empty buffer.

    Epsilon restarts from ``epsilon_start`` (default: the config's
    ``fine_tune_epsilon``) and anneals as usual. The first curve point is the
    zero-shot POL of the loaded weights.
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    model, cfg = model_from_checkpoint(checkpoint, n)
    eps = cfg.fine_tune_epsilon if epsilon_start is None else epsilon_start
    train = replace(cfg.train, epsilon_start=eps, epsilon_finish=min(eps, cfg.train.epsilon_finish), total_env_steps=steps)
    cfg = replace(
        cfg,
        n_agents=n,
        train=train,
        seed=cfg.seed if seed is None else seed,
        deterministic=cfg.deterministic if deterministic is None else deterministic,
        out_dir=str(out_dir),
    )
    learner = Learner(model, cfg.train)
    if checkpoint.optimizer is not None and checkpoint.optimizer.kind == cfg.train.optimizer:
        learner.opt = checkpoint.optimizer
    res = train_stage(cfg, out_dir, n=n, steps=steps, model=model, learner=learner)
    ft = FineTuneResult(res, list(res.curve))
    (Path(out_dir) / "fine_tune.json").write_text(json.dumps(ft.to_dict(), indent=2) + "\n")
    return ft
