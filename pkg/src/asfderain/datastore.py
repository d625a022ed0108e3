"""Clip, manifest and checkpoint storage.

Clips live on disk as a directory of 8-bit PNG frames
(``<clip_id>/frame_%05d.png``) next to a ``manifest.json`` sidecar. In memory a
clip is a float64 array of shape (T, H, W, 3) with values in [0, 1].
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

ROLES = ("clean", "rainy", "streak", "restored", "real")
SPLITS = ("train", "test", "real", "streak_db")
FRAME_PATTERN = "frame_{:05d}.png"
MANIFEST_NAME = "manifest.json"


class DatastoreError(Exception):
    pass


class ClipNotFoundError(DatastoreError):
    pass


class FrameShapeError(DatastoreError):
    pass


class FrameDecodeError(DatastoreError):
    pass


class EmptyClipError(DatastoreError):
    pass


class ClipTooSmallError(DatastoreError):
    pass


class ManifestError(DatastoreError):
    pass


class UnwritableError(DatastoreError):
    pass


@dataclass
class VideoClip:
    frames: np.ndarray
    role: str = "clean"

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise FrameShapeError(f"expected (T, H, W, 3) frames, got {frames.shape}")
        if frames.shape[0] < 1:
            raise EmptyClipError("a clip needs at least one frame")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("clip contains non-finite values")
        if self.role == "streak":
            if frames.min() < 0:
                raise ValueError("streak values must be nonnegative")
        elif frames.min() < 0 or frames.max() > 1:
            raise ValueError(f"{self.role} values must lie in [0, 1]")
        self.frames = frames

    @property
    def shape(self):
        return self.frames.shape

    def __len__(self):
        return self.frames.shape[0]

    def with_role(self, role):
        return VideoClip(self.frames.copy(), role)


@dataclass
class ManifestEntry:
    clip_id: str
    path: str
    T: int
    H: int
    W: int
    role: str
    seed_used: Optional[int] = None

    @property
    def pair_key(self):
        """Clip id with the trailing ``_<role>`` removed; links rainy/clean pairs."""
        suffix = "_" + self.role
        return self.clip_id[: -len(suffix)] if self.clip_id.endswith(suffix) else self.clip_id


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    split: str = "train"
    root: Optional[Path] = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")
        ids = [e.clip_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ManifestError("clip ids must be unique")
        for e in self.entries:
            if e.role not in ROLES:
                raise ManifestError(f"{e.clip_id}: unknown role {e.role!r}")
            if self.split == "streak_db" and e.role != "streak":
                raise ManifestError(f"{e.clip_id}: streak_db entries must have role 'streak'")

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def by_role(self, role):
        return [e for e in self.entries if e.role == role]

    def pairs(self, input_role="rainy", target_role="clean"):
        """(input, target) entries matched on ``pair_key``, in manifest order."""
        targets = {e.pair_key: e for e in self.by_role(target_role)}
        out = []
        for e in self.by_role(input_role):
            if e.pair_key not in targets:
                raise ManifestError(f"{e.clip_id} has no {target_role} partner")
            out.append((e, targets[e.pair_key]))
        return out

    def to_dict(self):
        return {"split": self.split, "entries": [asdict(e) for e in self.entries]}

    def save(self, path):
        path = Path(path)
        if path.is_dir() or path.suffix != ".json":
            path = path / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise ManifestError(f"manifest not found: {path}")
        raw = json.loads(path.read_text())
        entries = [ManifestEntry(**e) for e in raw["entries"]]
        return cls(entries=entries, split=raw["split"], root=path.parent)


def load_clip(path, role="clean"):
    path = Path(path)
    if not path.is_dir():
        raise ClipNotFoundError(f"clip directory not found: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if not files:
        raise EmptyClipError(f"no frames in {path}")
    frames = []
    for f in files:
        try:
            with Image.open(f) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError) as exc:
            raise FrameDecodeError(f"cannot decode {f}: {exc}") from exc
        if frames and arr.shape != frames[0].shape:
            raise FrameShapeError(f"{f.name} has shape {arr.shape}, expected {frames[0].shape}")
        frames.append(arr)
    return VideoClip(np.stack(frames).astype(np.float64) / 255.0, role)


def quantize(frames):
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_clip(clip, path):
    if len(clip.frames) < 1:
        raise EmptyClipError("refusing to save an empty clip")
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(quantize(clip.frames)):
            Image.fromarray(frame, "RGB").save(path / FRAME_PATTERN.format(i))
    except OSError as exc:
        raise UnwritableError(f"cannot write clip to {path}: {exc}") from exc


def verify_manifest(manifest):
    """Return a list of problems; empty when every entry matches its clip on disk."""
    problems = []
    for e in manifest.entries:
        try:
            clip = load_clip(manifest.resolve(e), e.role)
        except DatastoreError as exc:
            problems.append(f"{e.clip_id}: {exc}")
            continue
        if clip.frames.shape[:3] != (e.T, e.H, e.W):
            problems.append(f"{e.clip_id}: manifest says {(e.T, e.H, e.W)}, disk has {clip.frames.shape[:3]}")
    return problems


@dataclass
class TrainSample:
    rainy: VideoClip
    clean: VideoClip
    clip_id: str
    frame_start: int
    crop_origin: tuple
    seed: int


def crop_clip(clip, t0, length, y0, x0, size):
    return VideoClip(clip.frames[t0:t0 + length, y0:y0 + size, x0:x0 + size].copy(), clip.role)


def sample_batch(manifest, seed, crop_size, length, loader: Callable = None):
    """Draw one co-located (rainy, clean) crop; a pure function of its arguments."""
    if manifest.split != "train":
        raise ManifestError(f"sample_batch needs a train split, got {manifest.split!r}")
    loader = loader or (lambda e: load_clip(manifest.resolve(e), e.role))
    pairs = manifest.pairs()
    if not pairs:
        raise ManifestError("manifest has no rainy/clean pairs")
    rng = np.random.default_rng(seed)
    rainy_e, clean_e = pairs[int(rng.integers(len(pairs)))]
    if rainy_e.T < length:
        raise ClipTooSmallError(f"{rainy_e.clip_id}: T={rainy_e.T} < requested length {length}")
    if min(rainy_e.H, rainy_e.W) < crop_size:
        raise ClipTooSmallError(f"{rainy_e.clip_id}: {rainy_e.H}x{rainy_e.W} smaller than crop {crop_size}")
    t0 = int(rng.integers(0, rainy_e.T - length + 1))
    y0 = int(rng.integers(0, rainy_e.H - crop_size + 1))
    x0 = int(rng.integers(0, rainy_e.W - crop_size + 1))
    rainy, clean = loader(rainy_e), loader(clean_e)
    return TrainSample(
        rainy=crop_clip(rainy, t0, length, y0, x0, crop_size),
        clean=crop_clip(clean, t0, length, y0, x0, crop_size),
        clip_id=rainy_e.pair_key,
        frame_start=t0,
        crop_origin=(y0, x0),
        seed=int(seed),
    )


class ClipCache:
    """Memoizing loader for the training loop; clips are immutable once read."""

    def __init__(self, manifest):
        self.manifest = manifest
        self._clips = {}

    def __call__(self, entry):
        if entry.clip_id not in self._clips:
            self._clips[entry.clip_id] = load_clip(self.manifest.resolve(entry), entry.role)
        return self._clips[entry.clip_id]


# Checkpoints are zip archives of .npy members written with a fixed timestamp
# so identical contents give identical bytes.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path, arrays, meta):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            info = zipfile.ZipInfo("meta.json", date_time=_ZIP_EPOCH)
            zf.writestr(info, json.dumps(meta, sort_keys=True))
            for name in sorted(arrays):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH), buf.getvalue())
    except OSError as exc:
        raise UnwritableError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DatastoreError(f"checkpoint not found: {path}")
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return arrays, meta


def checkpoint_name(iteration):
    return f"ckpt_{iteration}.npz"
