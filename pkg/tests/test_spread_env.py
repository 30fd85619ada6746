import io
import itertools
import json

import numpy as np
import pytest

from transfqmix.numeric_core import ConfigurationError, UsageError
from transfqmix.spread_env import (
    SpreadConfig,
    SpreadEnv,
    WorldState,
    build_all_observation_matrices,
    build_observation_matrix,
    build_observation_vectors,
    build_state_matrix,
    dump_trajectory_step,
    percent_occupied_landmarks,
    reset,
    step,
)


def world(agents, landmarks, vel=None):
    a = np.asarray(agents, dtype=float)
    return WorldState(a, np.zeros_like(a) if vel is None else np.asarray(vel, float), np.asarray(landmarks, dtype=float))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SpreadConfig(n=1)
    with pytest.raises(ConfigurationError):
        SpreadConfig(pol_threshold=0)
    with pytest.raises(ConfigurationError):
        SpreadConfig(dt=-0.1)


def test_reset_deterministic_and_at_rest():
    cfg = SpreadConfig()
    a = reset(cfg, np.random.default_rng(5))
    b = reset(cfg, np.random.default_rng(5))
    assert np.array_equal(a.agent_pos, b.agent_pos) and np.array_equal(a.landmark_pos, b.landmark_pos)
    assert np.count_nonzero(a.agent_vel) == 0 and a.step_index == 0


def test_reset_uniform_mean():
    rng = np.random.default_rng(0)
    cfg = SpreadConfig()
    pts = np.concatenate([np.concatenate([s.agent_pos, s.landmark_pos]) for s in (reset(cfg, rng) for _ in range(10_000))])
    assert np.all(np.abs(pts.mean(axis=0)) < 0.05)
    assert pts.min() >= -1 and pts.max() <= 1


def test_noop_keeps_positions():
    cfg = SpreadConfig(n=2)
    s = world([[0, 0], [1, 1]], [[0.5, 0], [2, 2]])
    s2, r, done = step(s, [0, 0], cfg)
    assert np.array_equal(s2.agent_pos, s.agent_pos)
    assert r == pytest.approx(-(0.5 + np.sqrt(2)))
    assert not done


def test_perfect_coverage_zero_reward():
    cfg = SpreadConfig(n=3)
    pts = [[0, 0], [1, 0], [0, 1]]
    _, r, _ = step(world(pts, pts), [0, 0, 0], cfg)
    assert r == 0.0


def test_collision_penalty_one_pair():
    cfg = SpreadConfig(n=2)
    s = world([[0, 0], [0.2, 0]], [[0, 0], [0.2, 0]])
    _, r, _ = step(s, [0, 0], cfg)
    assert r == pytest.approx(-1.0)


def test_step_after_done_is_usage_error():
    cfg = SpreadConfig(n=2, episode_len=1)
    s, _, done = step(world([[0, 0], [1, 1]], [[0, 0], [1, 1]]), [0, 0], cfg)
    assert done
    with pytest.raises(UsageError):
        step(s, [0, 0], cfg)


def test_observation_rows():
    cfg = SpreadConfig(n=2)
    s = world([[1, 1], [3, 0]], [[1, 2], [0, 0]])
    obs = build_observation_matrix(s, 0, cfg)
    assert obs.shape == (4, 4)
    assert obs[0].tolist() == [0, 0, 1, 1]
    assert obs[2].tolist() == [0, 1, 0, 0]
    assert obs[1].tolist() == [2, -1, 0, 1]


def test_observation_column_sums_over_rollout():
    cfg = SpreadConfig(n=4)
    env = SpreadEnv(cfg, np.random.default_rng(1))
    env.reset()
    rng = np.random.default_rng(2)
    for _ in range(cfg.episode_len):
        obs = env.observations()
        assert np.all(obs[:, :, 2].sum(axis=1) == 1)
        assert np.all(obs[:, :, 3].sum(axis=1) == cfg.n)
        for a in range(cfg.n):
            assert np.array_equal(obs[a, a], [0, 0, 1, 1])
        env.step(rng.integers(0, 5, cfg.n))


def test_no_graph_features_strips_flags():
    cfg = SpreadConfig(n=3, graph_features=False)
    s = reset(cfg, np.random.default_rng(0))
    assert build_all_observation_matrices(s, cfg).shape == (3, 6, 2)
    assert build_state_matrix(s, cfg).shape == (6, 4)


def test_state_matrix():
    cfg = SpreadConfig(n=3)
    s = reset(cfg, np.random.default_rng(0))
    m = build_state_matrix(s, cfg)
    assert m.shape == (6, 5)
    assert np.count_nonzero(m[:, 2:4]) == 0
    assert m[:3, 4].tolist() == [1, 1, 1] and m[3:, 4].tolist() == [0, 0, 0]
    s2, _, _ = step(s, [2, 0, 0], cfg)
    m2 = build_state_matrix(s2, cfg)
    assert m2[0, 2] == pytest.approx(cfg.action_force * cfg.dt)
    assert np.count_nonzero(m2[3:, 2:4]) == 0


def test_pol_values():
    assert percent_occupied_landmarks(world([[0, 0], [1, 1]], [[0, 0], [1, 1]])) == 1.0
    assert percent_occupied_landmarks(world([[5, 5], [6, 6]], [[0, 0], [1, 1]])) == 0.0
    s = world([[0, 0], [1.1, 0], [9, 9]], [[0.1, 0], [1, 0.2], [-3, -3]])
    assert percent_occupied_landmarks(s, 0.3) == pytest.approx(2 / 3)


def test_one_agent_per_landmark_minimises_distance():
    rng = np.random.default_rng(0)
    for n in (2, 3, 4):
        lm = rng.uniform(-1, 1, (n, 2))
        best = min(
            (sum(np.linalg.norm(lm[:, None] - lm[list(c)][None], axis=-1).min(axis=1)), c)
            for c in itertools.product(range(n), repeat=n)
        )
        assert best[0] == 0 and len(set(best[1])) == n


def test_reward_upper_bound_and_determinism():
    cfg = SpreadConfig(n=3)
    actions = np.random.default_rng(9).integers(0, 5, (cfg.episode_len, 3))
    traces = []
    for _ in range(2):
        env = SpreadEnv(cfg, np.random.default_rng(4))
        env.reset()
        rs = [env.step(a)[0] for a in actions]
        assert max(rs) <= 0
        traces.append((rs, env.state.agent_pos.copy()))
    assert traces[0][0] == traces[1][0] and np.array_equal(traces[0][1], traces[1][1])


def test_observation_vector_layout():
    cfg = SpreadConfig(n=2)
    s = world([[1, 1], [3, 0]], [[1, 2], [0, 0]], vel=[[0.5, 0], [0, 0]])
    v = build_observation_vectors(s, cfg)
    assert v.shape == (2, cfg.obs_vector_dim)
    assert v[0].tolist() == [0.5, 0, 1, 1, 0, 1, -1, -1, 2, -1]


def test_trajectory_dump():
    fh = io.StringIO()
    s = world([[0, 0], [1, 1]], [[0, 0], [1, 1]])
    dump_trajectory_step(fh, 3, s, -0.5, 1.0)
    rec = json.loads(fh.getvalue())
    assert rec["episode"] == 3 and rec["pol"] == 1.0 and rec["agents"] == [[0, 0], [1, 1]]
