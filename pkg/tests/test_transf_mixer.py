import itertools

import numpy as np
import pytest
import torch

from transfqmix.numeric_core import ConfigurationError
from transfqmix.transf_mixer import TransformerMixer, init_recurrent, mixer_forward
from transfqmix.transformer import TransformerConfig

from reference import np_transformer_mixer

D = torch.float64


def rand_inputs(n=3, k=6, h=32, dtype=torch.float32, g=None):
    return (
        torch.randn(n, dtype=dtype, generator=g),
        torch.randn(n, h, dtype=dtype, generator=g),
        torch.randn(k, 5, dtype=dtype, generator=g),
        torch.randn(3, h, dtype=dtype, generator=g),
    )


def test_init_recurrent():
    r = init_recurrent(32)
    assert r.shape == (3, 32) and r.norm() == 0
    assert torch.equal(r, init_recurrent(32))


def test_zero_q_gives_bias_path():
    torch.manual_seed(0)
    mixer = TransformerMixer(5)
    _, hid, state, rec = rand_inputs()
    (w1, b1, w2, b2), _ = mixer.mixing_weights(hid, state, rec)
    qtot, _ = mixer(torch.zeros(3), hid, state, rec)
    assert torch.allclose(qtot, (b1 * w2).sum() + b2, atol=1e-6)


def test_matches_scalar_reference_tiny():
    torch.manual_seed(1)
    mixer = TransformerMixer(5, TransformerConfig(emb_dim=2, heads=1)).double()
    with torch.no_grad():
        for p in mixer.parameters():
            p.add_(0.3 * torch.randn_like(p))
    g = torch.Generator().manual_seed(2)
    for _ in range(5):
        q, hid, state, rec = rand_inputs(n=1, k=2, h=2, dtype=D, g=g)
        ref, ref_rec = np_transformer_mixer(q.numpy(), hid.numpy(), state.numpy(), rec.numpy(), mixer)
        got, new_rec = mixer_forward(q, hid, state, rec, mixer)
        assert abs(got.item() - ref) < 1e-12
        assert np.allclose(new_rec.detach().numpy(), ref_rec, atol=1e-12)


def test_recurrent_rows_are_pre_activation():
    torch.manual_seed(3)
    mixer = TransformerMixer(5)
    q, hid, state, rec = rand_inputs()
    _, new_rec = mixer(q, hid, state, rec)
    assert (new_rec < 0).any()


def test_count_mismatch():
    mixer = TransformerMixer(5)
    q, hid, state, rec = rand_inputs()
    with pytest.raises(ConfigurationError):
        mixer(q[:2], hid, state, rec)


def test_parameter_count_independent_of_n():
    mixer = TransformerMixer(5)
    for n, k in ((3, 6), (6, 12)):
        q, hid, state, rec = rand_inputs(n=n, k=k)
        assert mixer(q, hid, state, rec)[0].shape == ()
    assert sum(p.numel() for p in mixer.parameters()) == sum(p.numel() for p in TransformerMixer(5).parameters())


def test_permutations():
    torch.manual_seed(4)
    mixer = TransformerMixer(5)
    q, hid, state, rec = rand_inputs()
    base = mixer(q, hid, state, rec)[0]
    assert torch.allclose(mixer(q, hid, state[torch.randperm(6)], rec)[0], base, atol=1e-5)
    p = torch.tensor([2, 0, 1])
    assert torch.allclose(mixer(q[p], hid[p], state, rec)[0], base, atol=1e-5)


def test_igm_on_enumerated_joint_actions():
    g = torch.Generator().manual_seed(5)
    for seed in range(20):
        torch.manual_seed(seed)
        mixer = TransformerMixer(5, TransformerConfig(emb_dim=8, heads=2)).double()
        _, hid, state, rec = rand_inputs(n=2, k=4, h=8, dtype=D, g=g)
        qa = torch.randn(2, 3, dtype=D, generator=g)
        best = max(
            itertools.product(range(3), range(3)),
            key=lambda a: mixer(torch.stack([qa[0, a[0]], qa[1, a[1]]]), hid, state, rec)[0].item(),
        )
        assert best == tuple(qa.argmax(1).tolist())


def test_batched_equals_single():
    torch.manual_seed(6)
    mixer = TransformerMixer(5)
    items = [rand_inputs() for _ in range(4)]
    batched = mixer(*(torch.stack(x) for x in zip(*items)))[0]
    for i, it in enumerate(items):
        assert torch.allclose(batched[i], mixer(*it)[0], atol=1e-5)
