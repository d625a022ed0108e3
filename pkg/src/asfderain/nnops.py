"""Differentiable sampling primitives built on torch autograd.

Conventions: features are (N, C, H, W) or (C, H, W); coordinates, flows and
offsets carry (x, y) pairs in pixel units with pixel centres at integer
positions. Out-of-range samples are clamped to the nearest edge pixel.
"""
import torch
import torch.nn.functional as F


def _batched(t, ndim=4):
    return (t, False) if t.dim() == ndim else (t.unsqueeze(0), True)


def base_grid(h, w, dtype=torch.float32, device=None):
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=dtype, device=device),
        torch.arange(w, dtype=dtype, device=device),
        indexing="ij",
    )
    return torch.stack([xs, ys])


def _gather(flat, idx):
    # flat: (N, C, H*W); idx: (N, P) -> (N, C, P)
    return torch.gather(flat, 2, idx.unsqueeze(1).expand(-1, flat.shape[1], -1))


def bilinear_sample(feature, coords):
    """Sample ``feature`` at absolute ``coords`` (2, ...) with edge replication.

    ``coords`` may carry any trailing spatial shape; the output has the
    feature's channel count and the coords' spatial shape. Runs on
    ``grid_sample``; :func:`bilinear_sample_naive` is the gather-based
    reference with identical semantics.
    """
    feature, squeeze = _batched(feature)
    if squeeze:
        coords = coords.unsqueeze(0)
    n, c, h, w = feature.shape
    if coords.shape[0] != n or coords.shape[1] != 2:
        raise ValueError(f"coords shape {tuple(coords.shape)} does not match feature {tuple(feature.shape)}")
    out_shape = coords.shape[2:]
    x = coords[:, 0].reshape(n, 1, -1)
    y = coords[:, 1].reshape(n, 1, -1)
    # align_corners=True maps -1/+1 onto the first/last pixel centres
    gx = x * (2.0 / (w - 1)) - 1.0 if w > 1 else torch.zeros_like(x)
    gy = y * (2.0 / (h - 1)) - 1.0 if h > 1 else torch.zeros_like(y)
    grid = torch.stack([gx, gy], dim=-1)
    out = F.grid_sample(feature, grid, mode="bilinear", padding_mode="border", align_corners=True)
    out = out.reshape(n, c, *out_shape)
    return out.squeeze(0) if squeeze else out


def bilinear_sample_naive(feature, coords):
    """Reference sampler: explicit clamp, four-corner gather and lerp."""
    feature, squeeze = _batched(feature)
    if squeeze:
        coords = coords.unsqueeze(0)
    n, c, h, w = feature.shape
    if coords.shape[0] != n or coords.shape[1] != 2:
        raise ValueError(f"coords shape {tuple(coords.shape)} does not match feature {tuple(feature.shape)}")
    out_shape = coords.shape[2:]
    x = coords[:, 0].reshape(n, -1).clamp(0, w - 1)
    y = coords[:, 1].reshape(n, -1).clamp(0, h - 1)
    # Lower corner is kept one short of the last pixel so x == w-1 stays differentiable.
    x0 = torch.floor(x).clamp(max=max(w - 2, 0))
    y0 = torch.floor(y).clamp(max=max(h - 2, 0))
    fx = x - x0
    fy = y - y0
    x0i = x0.long()
    y0i = y0.long()
    x1i = (x0i + 1).clamp(max=w - 1)
    y1i = (y0i + 1).clamp(max=h - 1)
    flat = feature.reshape(n, c, h * w)
    v00 = _gather(flat, y0i * w + x0i)
    v01 = _gather(flat, y0i * w + x1i)
    v10 = _gather(flat, y1i * w + x0i)
    v11 = _gather(flat, y1i * w + x1i)
    fx = fx.unsqueeze(1)
    fy = fy.unsqueeze(1)
    top = v00 + fx * (v01 - v00)
    bottom = v10 + fx * (v11 - v10)
    out = (top + fy * (bottom - top)).reshape(n, c, *out_shape)
    return out.squeeze(0) if squeeze else out


def warp(feature, flow):
    """``out(p) = feature(p + flow(p))``."""
    if feature.shape[-2:] != flow.shape[-2:]:
        raise ValueError(f"flow {tuple(flow.shape)} does not match feature {tuple(feature.shape)}")
    h, w = feature.shape[-2:]
    grid = base_grid(h, w, flow.dtype, flow.device)
    return bilinear_sample(feature, grid + flow)


def kernel_taps(kh, kw, dilation=1, dtype=torch.float32, device=None):
    """Regular kernel grid as (K, 2) (x, y) displacements, row-major order."""
    ys, xs = torch.meshgrid(
        (torch.arange(kh, dtype=dtype, device=device) - kh // 2) * dilation,
        (torch.arange(kw, dtype=dtype, device=device) - kw // 2) * dilation,
        indexing="ij",
    )
    return torch.stack([xs.reshape(-1), ys.reshape(-1)], dim=1)


def deform_conv(feature, offsets, weight, bias=None, dilation=1):
    """Unmodulated deformable convolution, stride 1, output size = input size.

    ``offsets`` is (2K, H, W) (or batched) holding (dx, dy) for tap k at
    channels (2k, 2k+1); ``weight`` is (C_out, C_in, kh, kw).
    """
    feature, squeeze = _batched(feature)
    if squeeze:
        offsets = offsets.unsqueeze(0)
    n, c, h, w = feature.shape
    c_out, c_in, kh, kw = weight.shape
    k = kh * kw
    if c_in != c:
        raise ValueError(f"weight expects {c_in} input channels, feature has {c}")
    if offsets.shape != (n, 2 * k, h, w):
        raise ValueError(f"offsets must be {(n, 2 * k, h, w)}, got {tuple(offsets.shape)}")
    taps = kernel_taps(kh, kw, dilation, feature.dtype, feature.device)
    grid = base_grid(h, w, feature.dtype, feature.device)
    # (N, K, 2, H, W) absolute sampling positions
    pos = grid[None, None] + taps[None, :, :, None, None] + offsets.reshape(n, k, 2, h, w)
    pos = pos.permute(0, 2, 1, 3, 4)  # (N, 2, K, H, W)
    cols = bilinear_sample(feature, pos)  # (N, C, K, H, W)
    out = torch.einsum("oik,nikhw->nohw", weight.reshape(c_out, c_in, k), cols)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out.squeeze(0) if squeeze else out


def channel_attention(feature, w1, b1, w2, b2):
    """Squeeze-and-excitation gate: ``feature * sigmoid(W2 relu(W1 gap + b1) + b2)``.

    ``w1`` is (C_r, C), ``w2`` is (C, C_r).
    """
    feature, squeeze = _batched(feature)
    pooled = feature.mean(dim=(2, 3))
    hidden = F.relu(pooled @ w1.t() + b1)
    gate = torch.sigmoid(hidden @ w2.t() + b2)
    out = feature * gate[:, :, None, None]
    return out.squeeze(0) if squeeze else out
