"""Backbone: identity at init, seeding, context handling, determinism."""
from __future__ import annotations

import numpy as np
import pytest
import torch

from framemend.backbone import Backbone, BackboneConfig, TemporalContext, enhance_frame
from framemend.codec import Codec

SMALL = BackboneConfig(
    latent_channels=12, tokens_h=4, tokens_w=4, channels=32,
    num_blocks=2, num_heads=4, context_len=4,
)


def _latent(seed=0, batch=None):
    rng = np.random.default_rng(seed)
    shape = (4, 4, 12) if batch is None else (batch, 4, 4, 12)
    return torch.from_numpy(rng.standard_normal(shape)).float()


def test_identity_at_init():
    model = Backbone(SMALL, seed=0)
    z = _latent(1)
    with torch.no_grad():
        out = model(z)
    assert torch.equal(out, z)
    # also with context present
    with torch.no_grad():
        out_ctx = model(z, [_latent(2), _latent(3)])
    assert torch.equal(out_ctx, z)


def test_seeded_init_reproducible():
    a = Backbone(SMALL, seed=5)
    b = Backbone(SMALL, seed=5)
    for (na, pa), (nb, pb) in zip(
        sorted(a.state_dict().items()), sorted(b.state_dict().items())
    ):
        assert na == nb
        assert torch.equal(pa, pb)
    c = Backbone(SMALL, seed=6)
    assert any(
        not torch.equal(pa, pc)
        for pa, pc in zip(a.state_dict().values(), c.state_dict().values())
    )


def _perturbed(seed=0):
    model = Backbone(SMALL, seed=seed)
    gen = torch.Generator().manual_seed(99)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn(p.shape, generator=gen) * 0.02)
    return model


def test_forward_deterministic_bitwise():
    model = _perturbed()
    z = _latent(4)
    ctx = [_latent(5)]
    with torch.no_grad():
        a = model(z, ctx)
        b = model(z, ctx)
    assert torch.equal(a, b)


def test_context_changes_output():
    model = _perturbed()
    z = _latent(7)
    with torch.no_grad():
        none = model(z)
        with_ctx = model(z, [_latent(8)])
        other_ctx = model(z, [_latent(9)])
    assert not torch.equal(none, with_ctx)
    assert not torch.equal(with_ctx, other_ctx)


def test_context_order_matters():
    model = _perturbed()
    z = _latent(10)
    c1, c2 = _latent(11), _latent(12)
    with torch.no_grad():
        ab = model(z, [c1, c2])
        ba = model(z, [c2, c1])
    assert not torch.equal(ab, ba)


def test_batched_matches_single():
    model = _perturbed()
    z = _latent(13, batch=3)
    ctx = _latent(14, batch=3)
    with torch.no_grad():
        batched = model(z, [ctx])
        singles = torch.stack([model(z[i], [ctx[i]]) for i in range(3)])
    assert torch.allclose(batched, singles, atol=1e-6)


def test_too_much_context_rejected():
    model = Backbone(SMALL, seed=0)
    z = _latent(0)
    ctx = [_latent(i) for i in range(5)]  # context_len is 4
    with pytest.raises(ValueError):
        model(z, ctx)


def test_shape_mismatch_rejected():
    model = Backbone(SMALL, seed=0)
    with pytest.raises(ValueError):
        model(torch.zeros(4, 4, 11))
    with pytest.raises(ValueError):
        model(_latent(0), [torch.zeros(2, 2, 12)])


def test_non_finite_parameters_detected():
    model = Backbone(SMALL, seed=0)
    with torch.no_grad():
        model.in_proj.weight[0, 0] = float("nan")
    with pytest.raises(ValueError):
        model.assert_finite()


def test_gradients_reach_all_trainable_params():
    model = _perturbed()
    z = _latent(20)
    ctx = [_latent(21)]
    out = model(z, ctx)
    out.pow(2).mean().backward()
    missing = [n for n, p in model.named_parameters() if p.grad is None]
    assert missing == []


def test_temporal_context_ring():
    ctx = TemporalContext(max_len=2)
    for i in range(4):
        ctx.push(_latent(i), frame_index=i)
    assert len(ctx) == 2
    assert ctx.frame_indices() == [3, 2]
    assert torch.equal(ctx.latents()[0], _latent(3))
    ctx.clear()
    assert len(ctx) == 0


def test_enhance_frame_round_trip_identity_model():
    codec = Codec(patch_size=2, mixing_seed=0)
    model = Backbone(
        BackboneConfig(latent_channels=12, tokens_h=8, tokens_w=8, channels=32,
                       num_blocks=1, num_heads=4, context_len=2),
        seed=0,
    )
    frame = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        enhanced, zctx = enhance_frame(frame, codec, model)
    assert enhanced.shape == frame.shape
    assert torch.max((enhanced - frame).abs()) <= 1e-6
    assert zctx.shape == (8, 8, 12)


def test_default_config_parameter_count_near_half_million():
    model = Backbone(BackboneConfig(), seed=0)
    n = model.num_parameters()
    assert 0.3e6 < n < 0.8e6
