import sys

import numpy as np
import pytest
import torch

from transfqmix.learner import TrainConfig
from transfqmix.models import MultiAgentModel
from transfqmix.spread_env import SpreadConfig
from transfqmix.transformer import TransformerConfig

SMALL_T = TransformerConfig(emb_dim=8, heads=2, blocks=1)


def small_model(family="transfqmix", n=2, tcfg=SMALL_T, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    m = MultiAgentModel(family, SpreadConfig(n=n), tcfg, rnn_hidden=8, mixing_embed=4, hypernet_hidden=8)
    return m.to(dtype)


def relative_error(a, b, floor=1e-6):
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    return float(((a - b).abs() / torch.maximum(a.abs().maximum(b.abs()), torch.tensor(floor))).max())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_train():
    return TrainConfig(batch_size=2, buffer_size=8, episodes_per_update=2, target_update_interval=4)


def tiny_config(tmp_path, family="transfqmix", n=2, steps=500, seed=0, **extra):
    from transfqmix.runtime.config import build_config

    overrides = {
        "family": family,
        "n_agents": n,
        "seed": seed,
        "out_dir": str(tmp_path),
        "deterministic": True,
        "eval_interval": 200,
        "eval_episodes": 4,
        "log_interval": 100,
        "final_eval_episodes": 4,
        "train.total_env_steps": steps,
        "train.episodes_per_update": 2,
        "train.batch_size": 4,
        "train.buffer_size": 16,
        "train.target_update_interval": 8,
        "transformer.emb_dim": 8,
        "transformer.heads": 2,
        "transformer.blocks": 1,
        "rnn_hidden": 8,
        "hypernet_hidden": 8,
        "mixing_embed": 4,
    }
    overrides.update(extra)
    return build_config(None, overrides)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
