"""Re-degradation: random geometric re-mixing of streak layers.

A streak layer is pushed through two random affine chains; the two results
are mixed with weights ``w`` and blended back with the original through ``m``::

    out = clip(m * S + (1 - m) * (w1 * T1(S) + w2 * T2(S)), 0, 1)

Chains act identically on every frame of a clip so streak motion stays
coherent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

OPS = ("rotation", "zoom", "translation", "shear")


@dataclass
class Ranges:
    rotation: tuple = (-45.0, 45.0)  # degrees
    zoom: tuple = (0.5, 2.0)
    translation: float = 0.25  # fraction of frame size
    shear: tuple = (-0.3, 0.3)
    max_length: int = 3


@dataclass
class TransformOp:
    kind: str
    params: tuple

    def matrix(self, frame_size):
        """3x3 forward map on (x, y, 1), acting about the frame centre."""
        h, w = frame_size
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        to_c = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
        from_c = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
        if self.kind == "translation":
            dx, dy = self.params
            return np.array([[1, 0, dx], [0, 1, dy], [0, 0, 1]], dtype=np.float64)
        if self.kind == "rotation":
            a = np.deg2rad(self.params[0])
            core = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
        elif self.kind == "zoom":
            z = self.params[0]
            core = np.diag([z, z, 1.0])
        elif self.kind == "shear":
            core = np.array([[1, self.params[0], 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
        else:
            raise ValueError(f"unknown transform {self.kind!r}")
        return from_c @ core @ to_c


@dataclass
class TransformChain:
    ops: list = field(default_factory=list)

    def matrix(self, frame_size):
        m = np.eye(3)
        for op in self.ops:
            m = op.matrix(frame_size) @ m
        return m

    @classmethod
    def identity(cls):
        return cls([TransformOp("rotation", (0.0,)), TransformOp("zoom", (1.0,)), TransformOp("shear", (0.0,))])


@dataclass
class MixCoefficients:
    w: tuple
    m: float

    def __post_init__(self):
        w1, w2 = self.w
        if w1 < 0 or w2 < 0 or abs(w1 + w2 - 1.0) > 1e-12:
            raise ValueError(f"w must be nonnegative and sum to 1, got {self.w}")
        if not 0.0 <= self.m <= 1.0:
            raise ValueError(f"m must lie in [0, 1], got {self.m}")


@dataclass
class ReDeDraw:
    """Everything random about one re-degradation call."""

    use_real: bool
    chain1: TransformChain
    chain2: TransformChain
    mix: MixCoefficients


def _sample_op(rng, frame_size, ranges):
    kind = OPS[int(rng.integers(len(OPS)))]
    if kind == "rotation":
        params = (float(rng.uniform(*ranges.rotation)),)
    elif kind == "zoom":
        params = (float(rng.uniform(*ranges.zoom)),)
    elif kind == "translation":
        h, w = frame_size
        t = ranges.translation
        params = (float(rng.uniform(-t * w, t * w)), float(rng.uniform(-t * h, t * h)))
    else:
        params = (float(rng.uniform(*ranges.shear)),)
    return TransformOp(kind, params)


def sample_chain(rng, frame_size=(64, 64), ranges=None):
    ranges = ranges or Ranges()
    length = int(rng.integers(1, ranges.max_length + 1))
    return TransformChain([_sample_op(rng, frame_size, ranges) for _ in range(length)])


def apply_chain(streak, chain):
    """Warp a (H, W, C) frame or (T, H, W, C) clip through ``chain``.

    Bilinear resampling; regions mapped from outside the frame are empty.
    """
    arr = np.asarray(streak, dtype=np.float64)
    frames = arr[None] if arr.ndim == 3 else arr
    h, w = frames.shape[1:3]
    inv = np.linalg.inv(chain.matrix((h, w)))
    # ndimage works in (row, col) = (y, x) order
    swap = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=np.float64)
    inv_rc = swap @ inv @ swap
    mat = np.eye(3)
    mat[:2, :2] = inv_rc[:2, :2]
    offset = np.array([inv_rc[0, 2], inv_rc[1, 2], 0.0])
    out = np.empty_like(frames)
    for t in range(frames.shape[0]):
        out[t] = ndimage.affine_transform(frames[t], mat, offset=offset, order=1,
                                          mode="constant", cval=0.0, prefilter=False)
    out = np.maximum(out, 0.0)
    return out[0] if arr.ndim == 3 else out


def sample_draw(rng, frame_size, ranges=None):
    use_real = bool(rng.random() < 0.5)
    chain1 = sample_chain(rng, frame_size, ranges)
    chain2 = sample_chain(rng, frame_size, ranges)
    u = float(rng.uniform())
    m = float(rng.uniform())
    return ReDeDraw(use_real, chain1, chain2, MixCoefficients((u, 1.0 - u), m))


def apply_draw(s_u, s_l, draw):
    s_u = np.asarray(s_u, dtype=np.float64)
    s_l = np.asarray(s_l, dtype=np.float64)
    if s_u.shape != s_l.shape:
        raise ValueError(f"streak layers differ in shape: {s_u.shape} vs {s_l.shape}")
    base = s_u if draw.use_real else s_l
    w1, w2 = draw.mix.w
    m = draw.mix.m
    mixed = w1 * apply_chain(base, draw.chain1) + w2 * apply_chain(base, draw.chain2)
    return np.clip(m * base + (1.0 - m) * mixed, 0.0, 1.0)


def rede(s_u, s_l, rng, ranges=None):
    """Re-degrade: pick S_U or S_L by coin flip, remix through two random chains."""
    s_u = np.asarray(s_u, dtype=np.float64)
    frame_size = s_u.shape[-3:-1]
    return apply_draw(s_u, s_l, sample_draw(rng, frame_size, ranges))
