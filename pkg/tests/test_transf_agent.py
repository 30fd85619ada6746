import numpy as np
import pytest
import torch

from transfqmix.numeric_core import ConfigurationError, UsageError, finite_diff_gradient
from transfqmix.transf_agent import (
    TransformerAgent,
    agent_forward,
    decoupled_q_values,
    full_q_values,
    init_hidden,
    select_action,
    select_actions,
)
from transfqmix.transformer import TransformerConfig

from conftest import relative_error
from reference import np_agent

D = torch.float64


def test_init_hidden():
    h = init_hidden(32)
    assert h.shape == (32,) and h.norm() == 0
    assert torch.equal(init_hidden(32), h)
    assert init_hidden(8, (3, 2)).shape == (3, 2, 8)


def test_shapes_for_any_entity_count():
    agent = TransformerAgent(4, 5)
    for k in (6, 8, 10, 12):
        q, ents, h = agent_forward(torch.randn(k, 4), agent.init_hidden(), agent)
        assert q.shape == (5,) and h.shape == (32,) and ents.shape == (k, 32)


def test_feature_width_mismatch():
    agent = TransformerAgent(4, 5)
    with pytest.raises(ConfigurationError):
        agent(torch.zeros(6, 5), agent.init_hidden())


def test_entity_permutation():
    torch.manual_seed(0)
    agent = TransformerAgent(4, 5)
    obs, hid = torch.randn(6, 4), torch.randn(32)
    perm = torch.randperm(6)
    q1, e1, h1 = agent(obs, hid)
    q2, e2, h2 = agent(obs[perm], hid)
    assert torch.allclose(q1, q2, atol=1e-5) and torch.allclose(h1, h2, atol=1e-5)
    assert torch.allclose(e1[perm], e2, atol=1e-5)


def test_matches_numpy_reference_including_zero_start():
    torch.manual_seed(1)
    agent = TransformerAgent(4, 5, TransformerConfig(emb_dim=8, heads=2)).double()
    with torch.no_grad():
        for p in agent.parameters():
            p.add_(0.1 * torch.randn_like(p))
    for obs in (np.zeros((6, 4)), np.random.default_rng(0).normal(size=(6, 4))):
        hid = np.zeros(8)
        q_ref, h_ref = np_agent(obs, hid, agent)
        q, _, h = agent(torch.tensor(obs), torch.tensor(hid))
        assert np.allclose(q.detach().numpy(), q_ref, atol=1e-12)
        assert np.allclose(h.detach().numpy(), h_ref, atol=1e-12)


def test_recurrence_is_live():
    torch.manual_seed(2)
    agent = TransformerAgent(4, 5)
    o1, o2 = torch.randn(6, 4), torch.randn(6, 4)
    _, _, h1 = agent(o1, agent.init_hidden())
    q_carried, _, _ = agent(o2, h1)
    q_fresh, _, _ = agent(o2, agent.init_hidden())
    assert not torch.allclose(q_carried, q_fresh)


def test_gradients_reach_embedding_and_blocks():
    torch.manual_seed(3)
    agent = TransformerAgent(4, 3, TransformerConfig(emb_dim=4, heads=2, blocks=2)).double()
    obs, hid = torch.randn(5, 4, dtype=D), torch.randn(4, dtype=D)
    f = lambda: agent(obs, hid)[0].pow(2).sum()
    f().backward()
    params = dict(agent.named_parameters())
    fd = finite_diff_gradient(f, params)
    for k, p in params.items():
        assert relative_error(p.grad, fd[k], floor=1e-4) < 1e-4, k
    assert agent.embed.weight.grad.abs().sum() > 0


def test_decoupled_q_values():
    ents = torch.randn(3, 8)
    assert torch.count_nonzero(decoupled_q_values(ents, [0, 1, 2], torch.zeros(8, 1))) == 0
    ents[2] = ents[0]
    w = torch.randn(8, 1)
    q = decoupled_q_values(ents, [0, 2], w)
    assert q[0] == q[1]
    with pytest.raises(UsageError):
        decoupled_q_values(ents, [3], w)


def test_decoupled_swap_on_synthetic_entity_task():
    torch.manual_seed(4)
    agent = TransformerAgent(3, 2, TransformerConfig(emb_dim=8, heads=2), entity_actions=True)
    obs, hid = torch.randn(3, 3), torch.randn(8)
    q, _ = full_q_values(agent, obs, hid, [0, 1, 2])
    swapped = obs[[1, 0, 2]]
    q2, _ = full_q_values(agent, swapped, hid, [0, 1, 2])
    assert q.shape == (5,)
    assert torch.allclose(q[:2], q2[:2], atol=1e-5)
    assert torch.allclose(q[2:][[1, 0, 2]], q2[2:], atol=1e-5)


def test_select_action_greedy_and_mask():
    rng = np.random.default_rng(0)
    assert select_action([1, 5, 2], [1, 1, 1], 0.0, rng) == 1
    assert select_action([1, 5, 2], [1, 0, 1], 0.0, rng) == 2
    assert select_action([3, 3, 1], [1, 1, 1], 0.0, rng) == 0
    with pytest.raises(UsageError):
        select_action([1, 2], [0, 0], 0.0, rng)


def test_select_action_uniform_exploration():
    rng = np.random.default_rng(1)
    avail = np.array([1, 0, 1, 1, 1], dtype=bool)
    picks = select_actions(np.zeros((100_000, 5)), np.tile(avail, (100_000, 1)), 1.0, rng)
    freq = np.bincount(picks, minlength=5) / len(picks)
    assert freq[1] == 0
    assert np.all(np.abs(freq[avail] - 0.25) < 0.01)
