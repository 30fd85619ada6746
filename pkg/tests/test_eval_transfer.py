from dataclasses import replace

import numpy as np
import pytest
import torch

from transfqmix.eval_transfer.evaluation import (
    EvalReport,
    ModelPolicy,
    ScriptedAssignmentPolicy,
    UniformRandomPolicy,
    best_assignment,
    evaluate_policy,
    write_grid,
    zero_shot_matrix,
)
from transfqmix.eval_transfer.transfer import check_stage_widths, fine_tune, run_curriculum
from transfqmix.models import MultiAgentModel
from transfqmix.runtime.checkpoint import TransferIncompatibleError, load_checkpoint
from transfqmix.runtime.trainer import eval_seed, model_from_checkpoint, train_stage
from transfqmix.spread_env import SpreadConfig

from conftest import tiny_config


def test_report_validation():
    with pytest.raises(ValueError):
        EvalReport("spread:3", 0, 0.0, 0.0)


def test_random_policies_score_low():
    torch.manual_seed(0)
    rep = evaluate_policy(MultiAgentModel("transfqmix", SpreadConfig()), SpreadConfig(), 200, seed=1)
    assert 0.0 <= rep.mean_pol < 0.3
    assert evaluate_policy(UniformRandomPolicy(0), SpreadConfig(), 200, seed=1).mean_pol < 0.3


def test_scripted_oracle_covers_landmarks():
    for n in (3, 4):
        rep = evaluate_policy(ScriptedAssignmentPolicy(), SpreadConfig(n=n), 200, seed=2)
        assert rep.mean_pol >= 0.95


def test_best_assignment_brute_force():
    agents = np.array([[0.0, 0.0], [1.0, 0.0]])
    landmarks = np.array([[1.1, 0.0], [0.1, 0.0]])
    assert best_assignment(agents, landmarks) == (1, 0)


def test_same_seed_same_report_and_chunking():
    torch.manual_seed(1)
    model = MultiAgentModel("transfqmix", SpreadConfig())
    a = evaluate_policy(model, SpreadConfig(), 12, seed=5)
    b = evaluate_policy(model, SpreadConfig(), 12, seed=5, chunk=5)
    assert a.pols == b.pols and a.returns == pytest.approx(b.returns, abs=1e-9)
    assert len(a.pols) == 12 and all(0 <= p <= 1 for p in a.pols)


def test_evaluation_does_not_mutate():
    model = MultiAgentModel("transfqmix", SpreadConfig())
    before = model.params().snapshot()
    evaluate_policy(model, SpreadConfig(n=5), 5)
    assert all(torch.equal(before[k], v) for k, v in model.params().snapshot().items())


def test_transfer_incompatibility():
    qmix = MultiAgentModel("qmix", SpreadConfig(n=3))
    with pytest.raises(TransferIncompatibleError):
        evaluate_policy(qmix, SpreadConfig(n=4), 2)
    tq = MultiAgentModel("transfqmix", SpreadConfig(n=3))
    with pytest.raises(TransferIncompatibleError):
        evaluate_policy(tq, SpreadConfig(n=3, graph_features=False), 2)


def test_transfqmix_runs_on_all_team_sizes():
    tq = MultiAgentModel("transfqmix", SpreadConfig(n=3))
    grid = zero_shot_matrix({"tq": tq}, range(3, 9), 3)
    assert set(grid["tq"]) == set(range(3, 9))
    assert all(0 <= v <= 1 for v in grid["tq"].values())


def test_zero_shot_diagonal_and_table(tmp_path):
    torch.manual_seed(2)
    models = {"a": MultiAgentModel("transfqmix", SpreadConfig(n=3)), "b": MultiAgentModel("transfqmix", SpreadConfig(n=4))}
    grid = zero_shot_matrix(models, [3, 4], 10, seed=3)
    assert grid["a"][3] == evaluate_policy(models["a"], SpreadConfig(n=3), 10, 3).mean_pol
    assert grid == zero_shot_matrix(models, [3, 4], 10, seed=3)
    write_grid(grid, tmp_path / "g.tsv")
    lines = (tmp_path / "g.tsv").read_text().splitlines()
    assert lines[0] == "model\t3v3\t4v4" and lines[1].startswith("a\t")


def test_single_stage_curriculum_equals_training(tmp_path):
    cfg = tiny_config(tmp_path / "plain", steps=300)
    train_stage(cfg, tmp_path / "plain")
    cur = run_curriculum(cfg, tmp_path / "cur", [(2, 300)])
    stage_dir = tmp_path / "cur" / "stage0_spread2"
    assert (stage_dir / "metrics.csv").read_bytes() == (tmp_path / "plain" / "metrics.csv").read_bytes()
    assert (stage_dir / "final.ckpt").read_bytes() == (tmp_path / "plain" / "final.ckpt").read_bytes()
    assert len(cur.stages) == 1


def test_growing_curriculum_keeps_shapes(tmp_path):
    cfg = tiny_config(tmp_path, steps=100)
    res = run_curriculum(cfg, tmp_path, [(3, 100), (4, 100), (5, 100), (6, 100)])
    counts = {s.learner.params.count() for s in res.stages}
    assert len(counts) == 1
    assert [r["scenario"] for r in res.reports] == ["spread:3", "spread:4", "spread:5", "spread:6"]
    ck = load_checkpoint(tmp_path / "stage1_spread4" / "final.ckpt")
    model, _ = model_from_checkpoint(ck)
    assert all(torch.equal(model.params()[k], v) for k, v in ck.params.items())
    assert ck.counters["env_steps"] == 200


def test_incompatible_curriculum_fails_before_training(tmp_path):
    cfg = tiny_config(tmp_path, family="qmix")
    with pytest.raises(TransferIncompatibleError):
        run_curriculum(cfg, tmp_path, [(2, 100), (3, 100)])
    assert not any(tmp_path.iterdir())
    check_stage_widths(cfg, [2, 2])


def test_fine_tune_zero_steps_is_zero_shot(tmp_path):
    cfg = tiny_config(tmp_path / "src", steps=200)
    train_stage(cfg, tmp_path / "src")
    ft = fine_tune(tmp_path / "src" / "final.ckpt", 3, 0, tmp_path / "ft")
    model, ckcfg = model_from_checkpoint(tmp_path / "src" / "final.ckpt", 3)
    direct = evaluate_policy(model, ckcfg.scenario(3), cfg.eval_episodes, eval_seed(cfg.seed, 0, 0))
    assert ft.zero_shot_pol == direct.mean_pol
    assert ft.peak_dip is None
    assert (tmp_path / "ft" / "fine_tune.json").exists()


def test_fine_tune_curve_and_peak_dip(tmp_path):
    cfg = tiny_config(tmp_path / "src", steps=200)
    train_stage(cfg, tmp_path / "src")
    ft = fine_tune(tmp_path / "src" / "final.ckpt", 3, 400, tmp_path / "ft", epsilon_start=0.5)
    assert [s for s, _ in ft.curve] == [0, 200, 400]
    assert ft.peak_dip == pytest.approx(ft.curve[0][1] - min(p for _, p in ft.curve[1:]))
    ck = load_checkpoint(tmp_path / "ft" / "final.ckpt")
    assert ck.config["train"]["epsilon_start"] == 0.5 and ck.extra["n_agents"] == 3
