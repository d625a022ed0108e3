"""Particle-system rain: temporally coherent streak layers and additive compositing."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import kernels
from .datastore import FrameShapeError, VideoClip


class RainConfigError(ValueError):
    pass


@dataclass
class RainConfig:
    direction: float = 10.0
    wind: float = 0.0
    gravity: float = 0.5
    spawn_rate: float = 12.0
    intensity_range: tuple = (0.35, 0.8)
    length_range: tuple = (8.0, 18.0)
    width_range: tuple = (1.0, 2.0)
    depth_layers: int = 3
    seed: int = 0

    def __post_init__(self):
        self.intensity_range = tuple(float(v) for v in self.intensity_range)
        self.length_range = tuple(float(v) for v in self.length_range)
        self.width_range = tuple(float(v) for v in self.width_range)
        for name in ("intensity_range", "length_range", "width_range"):
            lo, hi = getattr(self, name)
            if len(getattr(self, name)) != 2 or lo > hi:
                raise RainConfigError(f"{name} must be an ordered [min, max] pair")
        lo, hi = self.intensity_range
        if lo < 0 or hi > 1:
            raise RainConfigError("intensity_range must lie within [0, 1]")
        if self.length_range[0] <= 0 or self.width_range[0] <= 0:
            raise RainConfigError("streak length and width must be positive")
        if self.spawn_rate < 0:
            raise RainConfigError("spawn_rate must be >= 0")
        if int(self.depth_layers) < 1:
            raise RainConfigError("depth_layers must be >= 1")
        self.depth_layers = int(self.depth_layers)
        self.seed = int(self.seed)

    def layer_factors(self):
        return 0.6 ** np.arange(self.depth_layers)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise RainConfigError(f"unknown rain config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_config_file(path))


def read_config_file(path):
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(path.read_text())
    return json.loads(path.read_text())


_FIELDS = ("x", "y", "vx", "vy", "length", "width", "intensity", "layer")


@dataclass
class ParticleState:
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    length: np.ndarray
    width: np.ndarray
    intensity: np.ndarray
    layer: np.ndarray
    rng: np.random.Generator

    def __len__(self):
        return len(self.x)

    def rng_state(self):
        return self.rng.bit_generator.state

    def mean_displacement(self):
        if len(self) == 0:
            return 0.0, 0.0
        return float(self.vx.mean()), float(self.vy.mean())


def _concat(state, new):
    kw = {k: np.concatenate([getattr(state, k), new[k]]) for k in _FIELDS}
    return ParticleState(**kw, rng=state.rng)


def _draw(config, rng, n):
    """Sample ``n`` new particles' geometry and velocity (positions left to caller)."""
    factors = config.layer_factors()
    layer = rng.integers(0, config.depth_layers, size=n)
    f = factors[layer]
    length = rng.uniform(*config.length_range, size=n) * f
    width = rng.uniform(*config.width_range, size=n) * f
    intensity = rng.uniform(*config.intensity_range, size=n) * f
    # Streak length equals the distance travelled during one frame's exposure.
    theta = np.deg2rad(config.direction)
    vx = length * np.sin(theta)
    vy = length * np.cos(theta)
    return dict(vx=vx, vy=vy, length=length, width=np.maximum(width, 0.5),
                intensity=intensity, layer=layer)


def _spawn_span(config, frame_size):
    """Horizontal range for spawning so slanted rain still covers the frame."""
    h, w = frame_size
    theta = np.deg2rad(config.direction)
    drift = h * np.tan(theta)
    return min(0.0, -drift), w + max(0.0, -drift)


def init_particles(config, frame_size):
    h, w = frame_size
    rng = np.random.default_rng(config.seed)
    mean_len = 0.5 * sum(config.length_range) * float(config.layer_factors().mean())
    crossing = h / max(mean_len * np.cos(np.deg2rad(config.direction)), 1e-6)
    n = int(rng.poisson(config.spawn_rate * crossing)) if config.spawn_rate > 0 else 0
    new = _draw(config, rng, n)
    lo, hi = _spawn_span(config, frame_size)
    new["x"] = rng.uniform(lo, hi, size=n)
    new["y"] = rng.uniform(-new["length"], h, size=n) if n else np.zeros(0)
    empty = {k: np.zeros(0, dtype=np.int64 if k == "layer" else np.float64) for k in _FIELDS}
    return _concat(ParticleState(**empty, rng=rng), new)


def step_particles(state, config, frame_size):
    h, w = frame_size
    x = state.x + state.vx
    y = state.y + state.vy
    vx = state.vx + config.wind
    vy = state.vy + config.gravity
    keep = (y < h) & (x > -state.length - 1) & (x < w + state.length + 1)
    moved = ParticleState(
        x=x[keep], y=y[keep], vx=vx[keep], vy=vy[keep],
        length=state.length[keep], width=state.width[keep],
        intensity=state.intensity[keep], layer=state.layer[keep], rng=state.rng,
    )
    rng = state.rng
    n = int(rng.poisson(config.spawn_rate)) if config.spawn_rate > 0 else 0
    new = _draw(config, rng, n)
    lo, hi = _spawn_span(config, frame_size)
    new["x"] = rng.uniform(lo, hi, size=n)
    new["y"] = -rng.uniform(0.0, 1.0, size=n) * new["vy"]
    return _concat(moved, new)


def segment_endpoints(state):
    """Streak segments run from each position along the particle's velocity."""
    speed = np.hypot(state.vx, state.vy)
    safe = np.where(speed > 0, speed, 1.0)
    ux = np.where(speed > 0, state.vx / safe, 0.0)
    uy = np.where(speed > 0, state.vy / safe, 1.0)
    return state.x, state.y, state.x + ux * state.length, state.y + uy * state.length


def render_streaks(state, frame_size):
    h, w = frame_size
    x0, y0, x1, y1 = segment_endpoints(state)
    plane = kernels.rasterize_segments(x0, y0, x1, y1, state.width, state.intensity, h, w)
    plane = np.minimum(plane, 1.0)
    return np.repeat(plane[:, :, None], 3, axis=2)


def simulate(config, T, frame_size):
    """Yield ``(state, frame)`` for T consecutive frames."""
    state = init_particles(config, frame_size)
    for t in range(T):
        if t > 0:
            state = step_particles(state, config, frame_size)
        yield state, render_streaks(state, frame_size)


def synthesize_rain_video(config, T, frame_size):
    if T < 1:
        raise ValueError("T must be >= 1")
    frames = [frame for _, frame in simulate(config, T, frame_size)]
    return VideoClip(np.stack(frames), "streak")


def composite(clean, streaks):
    if clean.frames.shape != streaks.frames.shape:
        raise FrameShapeError(f"clean {clean.frames.shape} vs streak {streaks.frames.shape}")
    return VideoClip(np.minimum(clean.frames + streaks.frames, 1.0), "rainy")


def _shift(img, dx, dy):
    """Translate a 2-D image by integer (dx, dy) with zero fill."""
    out = np.zeros_like(img)
    h, w = img.shape
    sy, sx = slice(max(dy, 0), h + min(dy, 0)), slice(max(dx, 0), w + min(dx, 0))
    ty, tx = slice(max(-dy, 0), h + min(-dy, 0)), slice(max(-dx, 0), w + min(-dx, 0))
    out[sy, sx] = img[ty, tx]
    return out


def _corr(a, b):
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / denom) if denom > 0 else 0.0


def coherence_statistic(config, T, frame_size):
    """Mean (shifted, unshifted) correlation between consecutive streak frames.

    Frame k is translated by the rounded mean particle velocity of frame k
    before being correlated with frame k+1.
    """
    shifted, plain = [], []
    prev = None
    for state, frame in simulate(config, T, frame_size):
        cur = frame[:, :, 0]
        if prev is not None:
            pframe, (dx, dy) = prev
            plain.append(_corr(pframe, cur))
            shifted.append(_corr(_shift(pframe, int(round(dx)), int(round(dy))), cur))
        prev = (cur, state.mean_displacement())
    return float(np.mean(shifted)), float(np.mean(plain))


def background_clip(T, frame_size, seed, speed=(1.0, 0.5), lo=0.1, hi=0.7):
    """Procedural clean video: smooth random texture drifting at a constant speed.

    Values stay in [lo, hi] so that additive rain rarely saturates.
    """
    h, w = frame_size
    rng = np.random.default_rng(seed)
    n_waves = 6
    kx = rng.uniform(0.5, 4.0, size=(3, n_waves)) * 2 * np.pi / w
    ky = rng.uniform(0.5, 4.0, size=(3, n_waves)) * 2 * np.pi / h
    sign = rng.choice([-1.0, 1.0], size=(3, n_waves))
    phase = rng.uniform(0, 2 * np.pi, size=(3, n_waves))
    amp = rng.uniform(0.5, 1.0, size=(3, n_waves))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = np.empty((T, h, w, 3))
    for t in range(T):
        px = xs - speed[0] * t
        py = ys - speed[1] * t
        for c in range(3):
            arg = kx[c, :, None, None] * px + sign[c, :, None, None] * ky[c, :, None, None] * py + phase[c, :, None, None]
            frames[t, :, :, c] = (amp[c, :, None, None] * np.sin(arg)).sum(0)
    # Shared normalization across the clip keeps the motion a pure translation.
    frames = (frames - frames.min()) / max(frames.max() - frames.min(), 1e-12)
    return VideoClip(lo + (hi - lo) * frames, "clean")


def with_seed(config, seed):
    return replace(config, seed=int(seed))
