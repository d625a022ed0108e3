"""Alignment-shift-fusion deraining network.

Per output frame t the network looks at a window of ``window`` frames centred
on t (indices clamped at the clip ends) and runs::

    extract -> align every window frame to frame t -> temporal channel shift
            -> adaptive gate -> fuse (1x1 conv + attention residual blocks)
            -> reconstruct a residual added to frame t

Frames enter as (T, 3, H, W) tensors; features stay at full resolution so
image-space optical flow applies to them unchanged.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datastore import VideoClip
from .flow import make_estimator
from .nnops import channel_attention, deform_conv, warp


@dataclass
class NetConfig:
    channels: int = 64
    shift_channels: Optional[int] = None  # defaults to channels // 8
    shift_distance: int = 1
    window: int = 5
    extractor_blocks: int = 2
    fusion_blocks: int = 8
    attention_reduction: int = 4
    kernel_size: int = 3
    dilations: tuple = (1, 2, 4)
    use_flow: bool = True
    use_dilated: bool = True
    use_shift: bool = True
    flow_estimator: str = "blockmatch"

    def __post_init__(self):
        if self.shift_channels is None:
            self.shift_channels = self.channels // 8
        self.dilations = tuple(self.dilations)
        if not 0 <= self.shift_channels <= self.channels // 2:
            raise ValueError(f"shift_channels must lie in [0, {self.channels // 2}]")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd number")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# Ablation ladder: each variant adds one component to the previous one.
ABLATIONS = {
    "M_a": dict(use_flow=False, use_dilated=False, use_shift=False),
    "M_b": dict(use_flow=True, use_dilated=False, use_shift=False),
    "M_c": dict(use_flow=True, use_dilated=True, use_shift=False),
    "M_d": dict(use_flow=True, use_dilated=True, use_shift=True),
}


def temporal_shift(stack, a, n=1):
    """Exchange channel blocks between stack neighbours.

    ``stack`` is (..., L, C, H, W). Output frame t takes channels [0, a) from
    frame t-n and channels [C-a, C) from frame t+n; the stack ends replicate
    themselves when the neighbour is missing. Middle channels pass through.
    """
    L, c = stack.shape[-4], stack.shape[-3]
    if not 0 <= a <= c // 2:
        raise ValueError(f"shift channels {a} outside [0, {c // 2}]")
    if a == 0:
        return stack
    t = torch.arange(L, device=stack.device)
    prev = (t - n).clamp(0, L - 1)
    nxt = (t + n).clamp(0, L - 1)
    return torch.cat(
        [stack[..., prev, :a, :, :], stack[..., a:c - a, :, :], stack[..., nxt, c - a:, :, :]],
        dim=-3,
    )


def adaptive_gate(x, weight, bias):
    """``x * sigmoid(conv3x3(x)) + x`` with zero padding."""
    return x * torch.sigmoid(F.conv2d(x, weight, bias, padding=weight.shape[-1] // 2)) + x


class ResBlock(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.conv1 = nn.Conv2d(c, c, 3, padding=1)
        self.conv2 = nn.Conv2d(c, c, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class AttentionResBlock(nn.Module):
    """conv - relu - conv - channel attention, plus identity skip."""

    def __init__(self, c, reduction):
        super().__init__()
        hidden = max(c // reduction, 1)
        self.conv1 = nn.Conv2d(c, c, 3, padding=1)
        self.conv2 = nn.Conv2d(c, c, 3, padding=1)
        self.ca_w1 = nn.Parameter(torch.zeros(hidden, c))
        self.ca_b1 = nn.Parameter(torch.zeros(hidden))
        self.ca_w2 = nn.Parameter(torch.zeros(c, hidden))
        self.ca_b2 = nn.Parameter(torch.zeros(c))

    def forward(self, x):
        y = self.conv2(F.relu(self.conv1(x)))
        return x + channel_attention(y, self.ca_w1, self.ca_b1, self.ca_w2, self.ca_b2)


class OffsetHead(nn.Module):
    """Predicts residual deformable offsets from (reference, neighbour) features.

    With ``dilated`` the input goes through parallel 3x3 convolutions at the
    given dilation rates; otherwise through a single 3x3 convolution. The
    projection to 2K channels is zero-initialised so training starts from
    the flow alone.
    """

    def __init__(self, c, k_taps, dilations=(1, 2, 4), dilated=True):
        super().__init__()
        rates = dilations if dilated else (1,)
        self.branches = nn.ModuleList(nn.Conv2d(2 * c, c, 3, padding=d, dilation=d) for d in rates)
        self.project = nn.Conv2d(c * len(rates), 2 * k_taps, 3, padding=1)

    def forward(self, x):
        return self.project(torch.cat([F.relu(b(x)) for b in self.branches], dim=1))


class ASFNet(nn.Module):
    FLOW_CACHE_SIZE = 4096

    def __init__(self, cfg: NetConfig = None, seed: int = 0):
        super().__init__()
        cfg = cfg or NetConfig()
        self.cfg = cfg
        c, ks = cfg.channels, cfg.kernel_size
        self.k_taps = ks * ks
        self.conv_first = nn.Conv2d(3, c, 3, padding=1)
        self.extractor = nn.Sequential(*[ResBlock(c) for _ in range(cfg.extractor_blocks)])
        self.offset_head = OffsetHead(c, self.k_taps, cfg.dilations, cfg.use_dilated)
        self.dcn_weight = nn.Parameter(torch.zeros(c, c, ks, ks))
        self.dcn_bias = nn.Parameter(torch.zeros(c))
        if cfg.use_shift:
            self.gate_weight = nn.Parameter(torch.zeros(c, c, 3, 3))
            self.gate_bias = nn.Parameter(torch.zeros(c))
        self.fuse_in = nn.Conv2d(cfg.window * c, c, 1)
        self.fusion = nn.ModuleList(AttentionResBlock(c, cfg.attention_reduction) for _ in range(cfg.fusion_blocks))
        self.reconstruct_conv = nn.Conv2d(c, 3, 3, padding=1)
        self.flow_fn = make_estimator(cfg.flow_estimator) if cfg.use_flow else None
        # flows depend only on image content, so repeated windows reuse them
        self._flow_cache = {}
        self.reset_parameters(seed)

    @torch.no_grad()
    def reset_parameters(self, seed=0):
        """Deterministic initialisation from ``seed``.

        Residual branches and the reconstruction head start small so the
        initial network is close to the identity on frames.
        """
        gen = torch.Generator().manual_seed(int(seed))
        for name, p in self.named_parameters():
            if p.dim() == 1:
                p.zero_()
                continue
            fan_in = p[0].numel()
            bound = math.sqrt(3.0 / fan_in)
            p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 * bound - bound)
            if name.endswith("conv2.weight") or name.startswith("reconstruct_conv"):
                p.mul_(0.1)
            elif name.startswith("offset_head.project"):
                p.zero_()

    # -- stages ----------------------------------------------------------
    def extract(self, frames):
        return self.extractor(F.relu(self.conv_first(frames)))

    def align(self, f_ref, f_nbr, flow=None):
        """Align ``f_nbr`` to ``f_ref``; ``flow`` maps reference positions into the neighbour."""
        if flow is not None:
            guide = warp(f_nbr, flow)
            delta = self.offset_head(torch.cat([guide, f_ref], dim=1))
            offsets = flow.repeat(1, self.k_taps, 1, 1) + delta
        else:
            offsets = self.offset_head(torch.cat([f_nbr, f_ref], dim=1))
        return deform_conv(f_nbr, offsets, self.dcn_weight, self.dcn_bias)

    def shift_and_gate(self, stack):
        if not self.cfg.use_shift:
            return stack
        stack = temporal_shift(stack, self.cfg.shift_channels, self.cfg.shift_distance)
        n, L = stack.shape[:2]
        gated = adaptive_gate(stack.flatten(0, 1), self.gate_weight, self.gate_bias)
        return gated.view(n, L, *gated.shape[1:])

    def fuse(self, stack):
        x = self.fuse_in(stack.flatten(1, 2))
        for block in self.fusion:
            x = block(x)
        return x

    def reconstruct(self, fused, center):
        return (center + self.reconstruct_conv(fused)).clamp(0.0, 1.0)

    # -- full pass -------------------------------------------------------
    def window_indices(self, t, T):
        r = self.cfg.window // 2
        return [min(max(t + j, 0), T - 1) for j in range(-r, r + 1)]

    def pair_flows(self, frames, pairs):
        """Flow for each (reference, neighbour) index pair, estimated on the images."""
        if self.flow_fn is None:
            return None
        imgs = frames.detach().permute(0, 2, 3, 1).cpu().double().numpy()
        h, w = imgs.shape[1:3]
        digests = [hashlib.sha1(im.tobytes()).digest() for im in imgs]
        out = []
        for t, s in pairs:
            if digests[t] == digests[s]:
                out.append(np.zeros((2, h, w)))
                continue
            key = (digests[t], digests[s])
            if key not in self._flow_cache:
                if len(self._flow_cache) >= self.FLOW_CACHE_SIZE:
                    self._flow_cache.pop(next(iter(self._flow_cache)))
                self._flow_cache[key] = self.flow_fn(imgs[t], imgs[s])
            out.append(self._flow_cache[key])
        return torch.as_tensor(np.stack(out), dtype=frames.dtype, device=frames.device)

    def forward(self, frames, centers=None, flows=None):
        """Restore ``centers`` (default: all) of a (T, 3, H, W) clip tensor.

        ``flows`` optionally maps (t, s) index pairs to precomputed (2, H, W)
        tensors. Returns (len(centers), 3, H, W).
        """
        T = frames.shape[0]
        centers = list(range(T)) if centers is None else list(centers)
        windows = [self.window_indices(t, T) for t in centers]
        pairs = sorted({(t, s) for t, win in zip(centers, windows) for s in win})
        index = {p: i for i, p in enumerate(pairs)}
        feats = self.extract(frames)
        ref = feats[[t for t, _ in pairs]]
        nbr = feats[[s for _, s in pairs]]
        if self.flow_fn is None:
            flow = None
        elif flows is not None:
            flow = torch.stack([flows[p] for p in pairs])
        else:
            flow = self.pair_flows(frames, pairs)
        aligned = self.align(ref, nbr, flow)
        stack = aligned[[index[(t, s)] for t, win in zip(centers, windows) for s in win]]
        stack = stack.view(len(centers), self.cfg.window, *aligned.shape[1:])
        fused = self.fuse(self.shift_and_gate(stack))
        return self.reconstruct(fused, frames[centers])

    # -- numpy boundary --------------------------------------------------
    def restore(self, clip: VideoClip, chunk: int = 8) -> VideoClip:
        frames = clip_to_tensor(clip, self.dtype)
        outs = []
        with torch.no_grad():
            for start in range(0, frames.shape[0], chunk):
                outs.append(self(frames, centers=range(start, min(start + chunk, frames.shape[0]))))
        return VideoClip(tensor_to_frames(torch.cat(outs)), "restored")

    @property
    def dtype(self):
        return self.conv_first.weight.dtype

    # -- checkpoint interop ---------------------------------------------
    def param_arrays(self):
        return {k: v.detach().cpu().numpy().copy() for k, v in self.state_dict().items()}

    def load_param_arrays(self, arrays):
        own = self.state_dict()
        missing = set(own) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for k, v in own.items():
            if tuple(arrays[k].shape) != tuple(v.shape):
                raise ValueError(f"shape mismatch for {k}: checkpoint {arrays[k].shape}, model {tuple(v.shape)}")
        self.load_state_dict({k: torch.as_tensor(arrays[k], dtype=own[k].dtype) for k in own})


def clip_to_tensor(clip, dtype=torch.float32):
    frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    return torch.as_tensor(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)), dtype=dtype)


def tensor_to_frames(t):
    return t.detach().cpu().double().numpy().transpose(0, 2, 3, 1).clip(0.0, 1.0)


def build_model(cfg: NetConfig = None, seed: int = 0, dtype=torch.float32):
    return ASFNet(cfg, seed).to(dtype)
