"""Fidelity and temporal-consistency metrics.

All metrics take frames in [0, 1] and work on BT.601 luminance at the
0-255 scale.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .datastore import DatastoreError, ManifestError, VideoClip, load_clip

LUMA = np.array([0.299, 0.587, 0.114])
PSNR_CAP = 100.0
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


def luminance(frame):
    """Y channel of an (..., 3) frame in [0, 1], on the 0-255 scale."""
    frame = np.asarray(frame, dtype=np.float64)
    return 255.0 * (frame @ LUMA)


def _check_pair(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def psnr_y(pred, gt):
    _check_pair(pred, gt)
    mse = np.mean((luminance(pred) - luminance(gt)) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(255.0 ** 2 / mse), PSNR_CAP))


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation, 'valid' extent
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(pred, gt, size=11, sigma=1.5):
    """Mean single-scale SSIM over all fully-contained Gaussian windows."""
    _check_pair(pred, gt)
    y1, y2 = luminance(pred), luminance(gt)
    if min(y1.shape) < size:
        raise ValueError(f"frame {y1.shape} smaller than the {size}x{size} SSIM window")
    g = gaussian_window(size, sigma)
    mu1, mu2 = _filter_valid(y1, g), _filter_valid(y2, g)
    s11 = _filter_valid(y1 * y1, g) - mu1 * mu1
    s22 = _filter_valid(y2 * y2, g) - mu2 * mu2
    s12 = _filter_valid(y1 * y2, g) - mu1 * mu2
    num = (2 * mu1 * mu2 + SSIM_C1) * (2 * s12 + SSIM_C2)
    den = (mu1 ** 2 + mu2 ** 2 + SSIM_C1) * (s11 + s22 + SSIM_C2)
    return float(np.mean(num / den))


def gradient_distance(a, b, scales=3):
    """Default perceptual stand-in: mean |grad-magnitude difference| over scales.

    Luminance is taken in [0, 1]; each coarser scale is a 2x2 average pool.
    """
    ya, yb = luminance(a) / 255.0, luminance(b) / 255.0
    total = 0.0
    for s in range(scales):
        ga, gb = _grad_mag(ya), _grad_mag(yb)
        total += np.mean(np.abs(ga - gb))
        if s < scales - 1:
            ya, yb = _pool(ya), _pool(yb)
    return float(total / scales)


def _grad_mag(img):
    gx = np.diff(img, axis=1, append=img[:, -1:])
    gy = np.diff(img, axis=0, append=img[-1:, :])
    return np.sqrt(gx * gx + gy * gy)


def _pool(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    if h == 0 or w == 0:
        return img
    return img[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def tlp(restored, gt, dist: Callable = gradient_distance):
    """Mean |dist(R_t, R_t+1) - dist(G_t, G_t+1)| over consecutive frame pairs."""
    r = restored.frames if isinstance(restored, VideoClip) else np.asarray(restored)
    g = gt.frames if isinstance(gt, VideoClip) else np.asarray(gt)
    _check_pair(r, g)
    if len(r) < 2:
        raise ValueError("tLP needs at least two frames")
    diffs = [abs(dist(r[t], r[t + 1]) - dist(g[t], g[t + 1])) for t in range(len(r) - 1)]
    return float(np.mean(diffs))


@dataclass
class ClipScore:
    id: str
    psnr_y: float
    ssim: float
    tlp: float


@dataclass
class MetricsReport:
    clips: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def means(self):
        if not self.clips:
            return {"psnr_y": float("nan"), "ssim": float("nan"), "tlp": float("nan")}
        return {k: float(np.mean([getattr(c, k) for c in self.clips])) for k in ("psnr_y", "ssim", "tlp")}

    def to_dict(self):
        return {"clips": [asdict(c) for c in self.clips], "means": self.means, "meta": self.meta}

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def score_clip(clip_id, restored, gt, dist=gradient_distance):
    r = restored.frames if isinstance(restored, VideoClip) else restored
    g = gt.frames if isinstance(gt, VideoClip) else gt
    p = float(np.mean([psnr_y(a, b) for a, b in zip(r, g)]))
    s = float(np.mean([ssim(a, b) for a, b in zip(r, g)]))
    t = tlp(r, g, dist) if len(r) >= 2 else 0.0
    return ClipScore(clip_id, p, s, t)


def evaluate(restorer: Callable, manifest, meta=None, dist=gradient_distance, loader=None):
    """Restore every rainy clip of a test manifest and score it against its clean pair.

    ``restorer`` maps a VideoClip to a restored VideoClip (e.g. ``model.restore``).
    """
    if manifest.split != "test":
        raise ManifestError(f"evaluate needs a test split, got {manifest.split!r}")
    loader = loader or (lambda e: load_clip(manifest.resolve(e), e.role))
    try:
        pairs = manifest.pairs()
    except ManifestError as exc:
        raise ManifestError(f"unpaired clips in test split: {exc}") from exc
    report = MetricsReport(meta=dict(meta or {}))
    report.meta.setdefault("distance", getattr(dist, "__name__", str(dist)))
    for rainy_e, clean_e in pairs:
        rainy, clean = loader(rainy_e), loader(clean_e)
        if rainy.frames.shape != clean.frames.shape:
            raise DatastoreError(f"{rainy_e.clip_id}: rainy/clean shapes differ")
        report.clips.append(score_clip(rainy_e.pair_key, restorer(rainy), clean, dist))
    return report
