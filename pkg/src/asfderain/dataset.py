"""Build synthetic rainy-video datasets on disk (clean + streak + rainy clips)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .datastore import Manifest, ManifestEntry, save_clip
from .rainsim import RainConfig, background_clip, composite, synthesize_rain_video, with_seed

# roles written for each split
SPLIT_ROLES = {
    "train": ("clean", "streak", "rainy"),
    "test": ("clean", "streak", "rainy"),
    "real": ("real",),
    "streak_db": ("streak",),
}


def clip_seeds(seed, count):
    """Per-clip (background, rain) seeds derived from one master seed."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [tuple(int(v) for v in c.generate_state(2)) for c in children]


def synth_clip(rain_cfg, T, size, bg_seed, rain_seed):
    rng = np.random.default_rng(bg_seed)
    speed = tuple(rng.uniform(-1.5, 1.5, size=2))
    clean = background_clip(T, size, bg_seed, speed=speed)
    streaks = synthesize_rain_video(with_seed(rain_cfg, rain_seed), T, size)
    return clean, streaks, composite(clean, streaks)


def build_dataset(out_dir, rain_cfg: RainConfig, count, T, size, seed, split="train", prefix="clip"):
    """Write ``count`` clip sets under ``out_dir`` and a manifest; returns the Manifest."""
    out_dir = Path(out_dir)
    entries = []
    for i, (bg_seed, rain_seed) in enumerate(clip_seeds(seed, count)):
        clean, streaks, rainy = synth_clip(rain_cfg, T, size, bg_seed, rain_seed)
        clips = {"clean": clean, "streak": streaks, "rainy": rainy, "real": rainy}
        for role in SPLIT_ROLES[split]:
            clip_id = f"{prefix}{i:04d}_{role}"
            save_clip(clips[role], out_dir / clip_id)
            entries.append(ManifestEntry(clip_id, clip_id, T, size[0], size[1], role, rain_seed))
    manifest = Manifest(entries, split, root=out_dir)
    manifest.save(out_dir)
    return manifest
