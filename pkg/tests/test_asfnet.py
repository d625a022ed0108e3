import numpy as np
import pytest
import torch

from asfderain.asfnet import (
    ABLATIONS,
    ASFNet,
    NetConfig,
    adaptive_gate,
    build_model,
    clip_to_tensor,
    temporal_shift,
)
from asfderain.datastore import VideoClip
from asfderain.rainsim import RainConfig, background_clip, composite, synthesize_rain_video

from helpers import autograd_grad, fd_grad, rel_error, sample_indices

D = torch.float64
SMALL = dict(channels=8, fusion_blocks=2, extractor_blocks=1)


def _rainy_clip(T=5, size=(16, 16), seed=0):
    clean = background_clip(T, size, seed, speed=(1.0, 0.0))
    streak = synthesize_rain_video(RainConfig(seed=seed, spawn_rate=6), T, size)
    return composite(clean, streak), clean


# -- temporal shift ----------------------------------------------------------

def test_shift_moves_blocks_exactly(rng):
    stack = torch.tensor(rng.normal(size=(3, 8, 4, 4)))
    out = temporal_shift(stack, 1)
    for t in range(3):
        prev, nxt = max(t - 1, 0), min(t + 1, 2)
        assert torch.equal(out[t, :1], stack[prev, :1])
        assert torch.equal(out[t, 7:], stack[nxt, 7:])
        assert torch.equal(out[t, 1:7], stack[t, 1:7])


def test_shift_zero_is_identity(rng):
    stack = torch.tensor(rng.normal(size=(3, 8, 4, 4)))
    assert torch.equal(temporal_shift(stack, 0), stack)


def test_shift_distance_and_batch(rng):
    stack = torch.tensor(rng.normal(size=(2, 5, 6, 3, 3)))
    out = temporal_shift(stack, 2, n=2)
    assert torch.equal(out[:, 2, :2], stack[:, 0, :2])
    assert torch.equal(out[:, 2, 4:], stack[:, 4, 4:])
    assert torch.equal(out[:, 4, 4:], stack[:, 4, 4:])


def test_shift_rejects_too_many_channels():
    with pytest.raises(ValueError):
        temporal_shift(torch.zeros(3, 8, 2, 2), 5)


# -- gate / fuse / reconstruct ----------------------------------------------

def test_gate_with_zero_conv_is_one_and_a_half(rng):
    x = torch.tensor(rng.normal(size=(2, 4, 5, 5)))
    out = adaptive_gate(x, torch.zeros(4, 4, 3, 3, dtype=D), torch.zeros(4, dtype=D))
    torch.testing.assert_close(out, 1.5 * x, rtol=0, atol=0)


def test_gate_saturates_to_double(rng):
    x = torch.tensor(rng.uniform(1, 2, size=(1, 2, 4, 4)))
    out = adaptive_gate(x, torch.zeros(2, 2, 3, 3, dtype=D), torch.full((2,), 60.0, dtype=D))
    torch.testing.assert_close(out, 2 * x)


def test_reconstruct_adds_residual_and_clamps():
    net = ASFNet(NetConfig(**SMALL)).double()
    with torch.no_grad():
        net.reconstruct_conv.weight.zero_()
        net.reconstruct_conv.bias.copy_(torch.tensor([0.1, -0.2, 0.9], dtype=D))
    center = torch.full((1, 3, 4, 4), 0.5, dtype=D)
    out = net.reconstruct(torch.zeros(1, 8, 4, 4, dtype=D), center)
    assert out[0, :, 0, 0].tolist() == pytest.approx([0.6, 0.3, 1.0])


def test_fuse_output_channels():
    net = ASFNet(NetConfig(**SMALL)).double()
    out = net.fuse(torch.zeros(2, 5, 8, 6, 6, dtype=D))
    assert out.shape == (2, 8, 6, 6)


# -- model ----------------------------------------------------------------

def test_seeded_init_is_deterministic():
    a = ASFNet(NetConfig(**SMALL), seed=3).param_arrays()
    b = ASFNet(NetConfig(**SMALL), seed=3).param_arrays()
    c = ASFNet(NetConfig(**SMALL), seed=4).param_arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a if a[k].size > 1)


def test_offset_projection_starts_at_zero():
    net = ASFNet(NetConfig(**SMALL))
    assert torch.count_nonzero(net.offset_head.project.weight) == 0


def test_forward_shapes_and_centers():
    rainy, _ = _rainy_clip(T=6)
    net = build_model(NetConfig(**SMALL), dtype=D)
    x = clip_to_tensor(rainy, D)
    with torch.no_grad():
        full = net(x)
        part = net(x, centers=[0, 5])
    assert full.shape == (6, 3, 16, 16)
    torch.testing.assert_close(part, full[[0, 5]])
    assert full.min() >= 0 and full.max() <= 1


def test_window_indices_clamp():
    net = ASFNet(NetConfig(**SMALL))
    assert net.window_indices(0, 4) == [0, 0, 0, 1, 2]
    assert net.window_indices(3, 4) == [1, 2, 3, 3, 3]


def test_restore_returns_clip():
    rainy, _ = _rainy_clip(T=3)
    out = build_model(NetConfig(**SMALL)).restore(rainy, chunk=2)
    assert isinstance(out, VideoClip) and out.frames.shape == rainy.frames.shape


def test_flow_cache_reused():
    rainy, _ = _rainy_clip(T=4)
    net = build_model(NetConfig(**SMALL))
    with torch.no_grad():
        net(clip_to_tensor(rainy))
        size = len(net._flow_cache)
        net(clip_to_tensor(rainy))
    assert size > 0 and len(net._flow_cache) == size


def test_checkpoint_arrays_shape_check():
    net = ASFNet(NetConfig(**SMALL))
    arrays = net.param_arrays()
    arrays["conv_first.weight"] = np.zeros((1, 1, 1, 1))
    with pytest.raises(ValueError):
        net.load_param_arrays(arrays)


@pytest.mark.parametrize("name", sorted(ABLATIONS))
def test_ablation_variants_build(name):
    net = ASFNet(NetConfig(**SMALL, **ABLATIONS[name]))
    assert hasattr(net, "gate_weight") == ABLATIONS[name]["use_shift"]
    assert (net.flow_fn is None) == (not ABLATIONS[name]["use_flow"])
    assert len(net.offset_head.branches) == (3 if ABLATIONS[name]["use_dilated"] else 1)


# -- end-to-end gradient check ------------------------------------------------

def _perturbed_net(seed=0):
    net = build_model(NetConfig(channels=4, fusion_blocks=2, extractor_blocks=1, shift_channels=1), seed, D)
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        # move away from zero-initialised parameters so no sample sits on a kink
        for p in net.parameters():
            p.add_(0.05 * torch.randn(p.shape, generator=gen, dtype=D))
        net.reconstruct_conv.weight.mul_(0.1)
        net.reconstruct_conv.bias.zero_()
        # fractional offsets keep bilinear taps away from integer grid lines
        net.offset_head.project.bias.copy_(0.3 + 0.4 * torch.rand(net.offset_head.project.bias.shape, generator=gen, dtype=D))
    return net


def test_end_to_end_gradients(rng):
    rainy, clean = _rainy_clip(T=5, size=(16, 16), seed=2)
    frames = clip_to_tensor(rainy, D).clamp(0.05, 0.95)
    net = _perturbed_net()
    flows = net.pair_flows(frames, [(2, s) for s in range(5)])
    flows = {(2, s): flows[s] for s in range(5)}
    proj = torch.tensor(rng.normal(size=(1, 3, 16, 16)), dtype=D)
    loss = lambda: (net(frames, centers=[2], flows=flows) * proj).sum()
    params = dict(net.named_parameters())
    for name in ("conv_first.weight", "offset_head.project.weight", "dcn_weight", "gate_weight",
                 "fusion.1.ca_w1", "reconstruct_conv.weight"):
        p = params[name]
        idx = sample_indices(p, 6, rng)
        assert rel_error(autograd_grad(loss, p, idx), fd_grad(loss, p, idx, 1e-7)) < 1e-3, name
    x = frames.clone().requires_grad_(True)
    loss_x = lambda: (net(x, centers=[2], flows=flows) * proj).sum()
    idx = sample_indices(x, 8, rng)
    assert rel_error(autograd_grad(loss_x, x, idx), fd_grad(loss_x, x, idx, 1e-7)) < 1e-3


def test_shift_inverse_recovers_interior_frames(rng):
    stack = torch.tensor(rng.normal(size=(6, 8, 3, 3)))
    back = temporal_shift(temporal_shift(stack, 2, 1), 2, -1)
    assert torch.equal(back[1:-1], stack[1:-1])


def test_shift_of_identical_frames_is_identity(rng):
    frame = torch.tensor(rng.normal(size=(1, 8, 3, 3)))
    stack = frame.repeat(4, 1, 1, 1)
    for a in range(5):
        assert torch.equal(temporal_shift(stack, a), stack)


def test_zeroed_second_conv_makes_fusion_block_identity(rng):
    net = ASFNet(NetConfig(**SMALL)).double()
    block = net.fusion[0]
    with torch.no_grad():
        block.conv2.weight.zero_()
        block.conv2.bias.zero_()
    x = torch.tensor(rng.normal(size=(1, 8, 5, 5)))
    assert torch.equal(block(x), x)


def test_default_fusion_depth():
    assert NetConfig().fusion_blocks == 8 and len(ASFNet(NetConfig(channels=8)).fusion) == 8
