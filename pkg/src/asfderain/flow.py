"""Optical-flow estimators used to pre-align neighbouring frames.

An estimator is any callable ``(frame_a, frame_b) -> (2, H, W)`` float array
giving the (dx, dy) displacement that maps a position in ``frame_a`` to the
corresponding position in ``frame_b``. Frames are (H, W, 3) arrays in [0, 1].
"""
from dataclasses import dataclass

import numpy as np

from . import kernels

LUMA = np.array([0.299, 0.587, 0.114])


def _check(frame_a, frame_b):
    if frame_a.shape != frame_b.shape:
        raise ValueError(f"frame shapes differ: {frame_a.shape} vs {frame_b.shape}")


def zero_flow(frame_a, frame_b):
    _check(frame_a, frame_b)
    return np.zeros((2,) + frame_a.shape[:2])


def _downsample(img):
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    return img[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _upsample_flow(flow, shape):
    h, w = shape
    up = 2 * np.repeat(np.repeat(flow, 2, axis=1), 2, axis=2)
    out = np.zeros((2, h, w), dtype=np.int64)
    hh, ww = min(h, up.shape[1]), min(w, up.shape[2])
    out[:, :hh, :ww] = up[:, :hh, :ww]
    # odd sizes: replicate the last row/column
    out[:, hh:, :] = out[:, hh - 1:hh, :]
    out[:, :, ww:] = out[:, :, ww - 1:ww]
    return out


@dataclass
class BlockMatchingFlow:
    """Coarse-to-fine dense block matching on luminance.

    The coarsest level searches ``radius`` pixels; each finer level doubles
    the flow and refines it within ``refine_radius``. Costs are integer SADs
    over a (2*half_block+1)^2 window, so ties resolve deterministically to the
    smallest displacement.
    """

    levels: int = 3
    radius: int = 3
    refine_radius: int = 1
    half_block: int = 3
    min_size: int = 8

    def __call__(self, frame_a, frame_b):
        _check(frame_a, frame_b)
        ya = frame_a @ LUMA
        yb = frame_b @ LUMA
        pyr = [(ya, yb)]
        while len(pyr) < self.levels and min(pyr[-1][0].shape) // 2 >= self.min_size:
            pyr.append((_downsample(pyr[-1][0]), _downsample(pyr[-1][1])))
        flow = None
        for depth, (la, lb) in enumerate(reversed(pyr)):
            qa = np.round(la * 255).astype(np.int64)
            qb = np.round(lb * 255).astype(np.int64)
            if flow is None:
                init = np.zeros((2,) + la.shape, dtype=np.int64)
                radius = self.radius
            else:
                init = _upsample_flow(flow, la.shape)
                radius = self.refine_radius
            flow = kernels.block_match(qa, qb, init, radius, self.half_block)
        return flow.astype(np.float64)


ESTIMATORS = {
    "zero": lambda: zero_flow,
    "blockmatch": BlockMatchingFlow,
}


def make_estimator(name, **kwargs):
    try:
        return ESTIMATORS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown flow estimator {name!r}; choose from {sorted(ESTIMATORS)}") from None


def estimate_flow(frame_a, frame_b, estimator="blockmatch"):
    fn = make_estimator(estimator) if isinstance(estimator, str) else estimator
    return fn(frame_a, frame_b)
