"""Experiment configuration: dataclasses plus an INI-style file format.

A config file has one section per component::

    [experiment]
    family = transfqmix
    scenario = spread:3
    seed = 1

    [train]
    total_env_steps = 500000

    [transformer]
    emb_dim = 32

Unknown sections or keys are rejected. Learning settings left unset
(optimizer, lr, td_lambda) take the family defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..learner import TrainConfig
from ..models import FAMILIES, default_learning_setup
from ..numeric_core import ConfigurationError
from ..spread_env import SpreadConfig
from ..transformer import TransformerConfig

OUT_ROOT_ENV = "TRANSFQMIX_OUT"


def parse_scenario(text: str) -> int:
    """``"spread:4"`` -> 4."""
    name, _, n = text.partition(":")
    if name != "spread" or not n.isdigit():
        raise ConfigurationError(f"scenario must look like 'spread:<n>', got {text!r}")
    return int(n)


def parse_stages(text: str) -> list[tuple[int, int]]:
    """``"spread:3@500000, spread:4@500000"`` -> ``[(3, 500000), (4, 500000)]``."""
    stages = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        scen, _, steps = item.partition("@")
        if not steps.isdigit():
            raise ConfigurationError(f"curriculum stage must look like 'spread:<n>@<steps>', got {item!r}")
        stages.append((parse_scenario(scen), int(steps)))
    return stages


@dataclass
class ExperimentConfig:
    family: str = "transfqmix"
    n_agents: int = 3
    seed: int = 0
    out_dir: str = ""
    deterministic: bool = False
    eval_interval: int = 40_000
    eval_episodes: int = 30
    final_eval_episodes: int = 1000
    log_interval: int = 10_000
    checkpoint_interval: int = 0  # 0: only best/final checkpoints
    rnn_hidden: int = 64
    mixing_embed: int = 32
    hypernet_hidden: int = 64
    curriculum: list[tuple[int, int]] = field(default_factory=list)
    flush_buffer_between_stages: bool = True
    restart_epsilon_each_stage: bool = True
    fine_tune_epsilon: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    env: SpreadConfig = field(default_factory=SpreadConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown model family {self.family!r}; choose from {sorted(FAMILIES)}")
        if self.n_agents != self.env.n:
            self.env = replace(self.env, n=self.n_agents)
        if self.eval_interval <= 0 or self.eval_episodes <= 0 or self.log_interval <= 0:
            raise ConfigurationError("eval_interval, eval_episodes and log_interval must be positive")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")

    def scenario(self, n: int | None = None) -> SpreadConfig:
        return self.env if n is None else replace(self.env, n=n)

    def resolved_out_dir(self) -> Path:
        if self.out_dir:
            return Path(self.out_dir)
        root = os.environ.get(OUT_ROOT_ENV, "runs")
        return Path(root) / f"{self.family}_spread{self.n_agents}_seed{self.seed}"

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["curriculum"] = [list(s) for s in self.curriculum]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        train = TrainConfig(**d.pop("train"))
        tcfg = TransformerConfig(**d.pop("transformer"))
        env = SpreadConfig(**d.pop("env"))
        d["curriculum"] = [tuple(s) for s in d.get("curriculum", [])]
        return cls(train=train, transformer=tcfg, env=env, **d)


_EXPERIMENT_KEYS = {f.name for f in fields(ExperimentConfig)} - {"train", "transformer", "env", "n_agents", "curriculum"}
_SECTIONS = {"train": TrainConfig, "transformer": TransformerConfig, "env": SpreadConfig}


def _coerce(value: str, default: Any, key: str) -> Any:
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            return int(value.replace("_", ""))
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {value!r}") from None
    if default is None:
        v = value.strip()
        if v.lower() in ("", "none"):
            return None
        try:
            return int(v)
        except ValueError:
            return v
    return value.strip()


def build_config(
    sections: dict[str, dict[str, str]] | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Assemble and validate a config from raw string sections plus typed overrides.

    ``overrides`` keys are ``"section.key"`` or bare experiment keys; they win
    over file values.
    """
    sections = {k: dict(v) for k, v in (sections or {}).items()}
    unknown = set(sections) - {"experiment", "curriculum", *_SECTIONS}
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    exp_raw = sections.get("experiment", {})
    base = ExperimentConfig()
    exp_kwargs: dict[str, Any] = {}
    for key, value in exp_raw.items():
        if key == "scenario":
            exp_kwargs["n_agents"] = parse_scenario(value)
        elif key in _EXPERIMENT_KEYS:
            exp_kwargs[key] = _coerce(value, getattr(base, key), f"experiment.{key}")
        else:
            raise ConfigurationError(f"unknown key experiment.{key}")
    cur = sections.get("curriculum", {})
    for key, value in cur.items():
        if key == "stages":
            exp_kwargs["curriculum"] = parse_stages(value)
        elif key in ("flush_buffer_between_stages", "restart_epsilon_each_stage"):
            exp_kwargs[key] = _coerce(value, True, f"curriculum.{key}")
        else:
            raise ConfigurationError(f"unknown key curriculum.{key}")

    sub_kwargs: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    for name, cls in _SECTIONS.items():
        defaults = {f.name: f.default for f in fields(cls)}
        for key, value in sections.get(name, {}).items():
            if key not in defaults:
                raise ConfigurationError(f"unknown key {name}.{key}")
            sub_kwargs[name][key] = _coerce(value, defaults[key], f"{name}.{key}")

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, sub = key.rpartition(".")
        if section in _SECTIONS:
            if sub not in {f.name for f in fields(_SECTIONS[section])}:
                raise ConfigurationError(f"unknown key {key}")
            sub_kwargs[section][sub] = value
        elif key in _EXPERIMENT_KEYS or key in ("n_agents", "curriculum"):
            exp_kwargs[key] = value
        else:
            raise ConfigurationError(f"unknown override {key}")

    family = exp_kwargs.get("family", base.family)
    if family not in FAMILIES:
        raise ConfigurationError(f"unknown model family {family!r}; choose from {sorted(FAMILIES)}")
    opt, lr, lam = default_learning_setup(family)
    train_kw = sub_kwargs["train"]
    train_kw.setdefault("optimizer", opt)
    train_kw.setdefault("lr", lr)
    train_kw.setdefault("td_lambda", lam)
    n = exp_kwargs.get("n_agents", sub_kwargs["env"].get("n", base.n_agents))
    sub_kwargs["env"]["n"] = n
    exp_kwargs["n_agents"] = n
    return ExperimentConfig(
        train=TrainConfig(**train_kw),
        transformer=TransformerConfig(**sub_kwargs["transformer"]),
        env=SpreadConfig(**sub_kwargs["env"]),
        **exp_kwargs,
    )


def read_config_file(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    if not parser.read(path):
        raise ConfigurationError(f"cannot read config file {path}")
    return {s: dict(parser.items(s)) for s in parser.sections()}


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    return build_config(read_config_file(path) if path else None, overrides)


def write_config_file(cfg: ExperimentConfig, path: str | Path) -> None:
    """Write a config snapshot that ``load_config`` reads back unchanged."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    exp = {k: str(getattr(cfg, k)) for k in sorted(_EXPERIMENT_KEYS)}
    exp["scenario"] = f"spread:{cfg.n_agents}"
    parser["experiment"] = exp
    if cfg.curriculum:
        parser["curriculum"] = {
            "stages": ", ".join(f"spread:{n}@{s}" for n, s in cfg.curriculum),
            "flush_buffer_between_stages": str(cfg.flush_buffer_between_stages),
            "restart_epsilon_each_stage": str(cfg.restart_epsilon_each_stage),
        }
    for name in _SECTIONS:
        obj = getattr(cfg, name)
        parser[name] = {f.name: ("none" if getattr(obj, f.name) is None else str(getattr(obj, f.name))) for f in fields(obj)}
    with open(path, "w") as fh:
        parser.write(fh)
