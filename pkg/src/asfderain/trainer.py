"""Supervised pretraining and online re-degraded learning (ORL).

ORL iteration, given a model f::

    B_U = f(O_U)                 pseudo-label, no gradient
    S_U = O_U - B_U
    S_L ~ streak database
    O_P = min(B_U + rede(S_U, S_L), 1)
    loss = mae(f(O_L), B_L) + lambda_un * mae(f(O_P), B_U)

All randomness in an iteration is derived from (seed, iteration), which is
what makes resumed runs bit-identical to uninterrupted ones.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import rede as rede_mod
from .asfnet import ASFNet, NetConfig, clip_to_tensor, tensor_to_frames
from .datastore import (
    ClipCache,
    ClipTooSmallError,
    DatastoreError,
    Manifest,
    VideoClip,
    checkpoint_name,
    load_checkpoint,
    sample_batch,
    save_checkpoint,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class NonFiniteError(TrainingError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    lambda_un: float = 1.0
    crop: int = 256
    length: int = 5
    iterations: int = 20000
    seed: int = 0
    checkpoint_every: int = 1000
    loss_frames: str = "center"  # "center" or "all"
    dtype: str = "float32"
    train_manifest: str = ""
    real_manifest: str = ""
    streak_manifest: str = ""
    test_manifest: str = ""
    init_ckpt: str = ""
    net: NetConfig = field(default_factory=NetConfig)
    rede: rede_mod.Ranges = field(default_factory=rede_mod.Ranges)

    def __post_init__(self):
        if isinstance(self.net, dict):
            self.net = NetConfig.from_dict(self.net)
        if isinstance(self.rede, dict):
            self.rede = rede_mod.Ranges(**{k: tuple(v) if isinstance(v, list) else v for k, v in self.rede.items()})
        self.betas = tuple(self.betas)
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be nonnegative")
        if self.lambda_un < 0:
            raise ConfigError("lambda_un must be >= 0")
        if self.length < 1 or self.length % 2 == 0:
            raise ConfigError("temporal length must be odd")
        if self.loss_frames not in ("center", "all"):
            raise ConfigError("loss_frames must be 'center' or 'all'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _coerce(value: str, current):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, (tuple, list)):
        return tuple(json.loads(value))
    if current is None:
        return json.loads(value)
    return value


def apply_overrides(cfg, overrides):
    """Apply ``key=value`` strings (dotted keys reach nested configs) in place.

    Values are converted to the type of the field they replace.
    """
    old_channels = getattr(getattr(cfg, "net", None), "channels", None)
    touched = set()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        touched.add(key)
        target = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            if not is_dataclass(target) or not hasattr(target, p):
                raise ConfigError(f"unknown config key {key!r}")
            target = getattr(target, p)
        name = parts[-1]
        if not is_dataclass(target) or name not in {f.name for f in fields(target)}:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            setattr(target, name, _coerce(value, getattr(target, name)))
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    # the derived shift width follows a channel override unless set explicitly
    if (isinstance(cfg, TrainConfig) and "net.shift_channels" not in touched
            and cfg.net.shift_channels == old_channels // 8):
        cfg.net.shift_channels = None
    try:
        if isinstance(cfg, TrainConfig):
            cfg.net.__post_init__()
        cfg.__post_init__()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def mae_loss(pred, target):
    """Mean absolute difference; accepts tensors, arrays or VideoClips."""
    if isinstance(pred, VideoClip):
        pred = pred.frames
    if isinstance(target, VideoClip):
        target = target.frames
    if tuple(pred.shape) != tuple(target.shape):
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if isinstance(pred, torch.Tensor):
        return (pred - target).abs().mean()
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))


def make_optimizer(model, cfg):
    # AdamW applies weight decay decoupled from the adaptive step
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps,
                             weight_decay=cfg.weight_decay)


def _centers(cfg, T):
    return [T // 2] if cfg.loss_frames == "center" else list(range(T))


def _check_finite(model, loss):
    if not torch.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss.item()}")
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NonFiniteError(f"non-finite gradient in parameter {name}")


def supervised_loss(model, sample, cfg):
    dtype = model.dtype
    frames = clip_to_tensor(sample.rainy, dtype)
    target = clip_to_tensor(sample.clean, dtype)
    centers = _centers(cfg, frames.shape[0])
    return mae_loss(model(frames, centers=centers), target[centers])


def supervised_step(model, optimizer, sample, cfg):
    """One AdamW step on the MAE of the restored synthetic clip; returns the pre-step loss."""
    optimizer.zero_grad(set_to_none=True)
    loss = supervised_loss(model, sample, cfg)
    loss.backward()
    _check_finite(model, loss)
    optimizer.step()
    return float(loss.detach())


class StreakDatabase:
    """Random (T, H, W, 3) crops from a pool of streak clips."""

    def __init__(self, clips):
        self.clips = [c.frames if isinstance(c, VideoClip) else np.asarray(c) for c in clips]
        if not self.clips:
            raise TrainingError("streak database is empty")

    @classmethod
    def from_manifest(cls, manifest):
        cache = ClipCache(manifest)
        return cls([cache(e) for e in manifest.by_role("streak")])

    def sample(self, rng, shape):
        T, H, W = shape[:3]
        clip = self.clips[int(rng.integers(len(self.clips)))]
        if clip.shape[0] < T or clip.shape[1] < H or clip.shape[2] < W:
            raise ClipTooSmallError(f"streak clip {clip.shape} too small for {shape}")
        t0 = int(rng.integers(0, clip.shape[0] - T + 1))
        y0 = int(rng.integers(0, clip.shape[1] - H + 1))
        x0 = int(rng.integers(0, clip.shape[2] - W + 1))
        return clip[t0:t0 + T, y0:y0 + H, x0:x0 + W].copy()


@dataclass
class ORLTrace:
    """Intermediate quantities of one ORL step, kept for inspection and tests."""

    pseudo_clean: np.ndarray
    real_streaks: np.ndarray
    synthetic_streaks: np.ndarray
    pseudo_rainy: np.ndarray


def pseudo_pair(model, real_clip, streak_db, rng, cfg):
    """Build (O_P, B_U) from a real clip with the current model."""
    frames = real_clip.frames if isinstance(real_clip, VideoClip) else np.asarray(real_clip)
    with torch.no_grad():
        b_u = tensor_to_frames(model(clip_to_tensor(frames, model.dtype)))
    s_u = frames - b_u
    s_l = streak_db.sample(rng, frames.shape)
    o_p = np.minimum(b_u + rede_mod.rede(s_u, s_l, rng, cfg.rede), 1.0)
    return ORLTrace(b_u, s_u, s_l, o_p)


def orl_losses(model, real_clip, syn_sample, streak_db, rng, cfg, trace=None):
    pair = trace or pseudo_pair(model, real_clip, streak_db, rng, cfg)
    dtype = model.dtype
    o_p = torch.as_tensor(pair.pseudo_rainy.transpose(0, 3, 1, 2).copy(), dtype=dtype)
    b_u = torch.as_tensor(pair.pseudo_clean.transpose(0, 3, 1, 2).copy(), dtype=dtype)
    centers = _centers(cfg, o_p.shape[0])
    l_un = mae_loss(model(o_p, centers=centers), b_u[centers])
    l_su = supervised_loss(model, syn_sample, cfg)
    return l_su, l_un, pair


def orl_step(model, optimizer, real_clip, syn_sample, streak_db, rng, cfg):
    """One ORL iteration; returns (L_SU, L_UN) measured before the step."""
    optimizer.zero_grad(set_to_none=True)
    l_su, l_un, _ = orl_losses(model, real_clip, syn_sample, streak_db, rng, cfg)
    total = l_su + cfg.lambda_un * l_un
    total.backward()
    _check_finite(model, total)
    optimizer.step()
    return float(l_su.detach()), float(l_un.detach())


# -- checkpoints -----------------------------------------------------------

def checkpoint_arrays(model, optimizer=None):
    arrays = {"param/" + k: v for k, v in model.param_arrays().items()}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for p, state in optimizer.state.items():
            for key, val in state.items():
                arrays[f"opt/{names[id(p)]}/{key}"] = val.detach().cpu().numpy().copy()
    return arrays


def write_checkpoint(path, model, optimizer, iteration, cfg, mode):
    meta = {
        "iteration": int(iteration),
        "mode": mode,
        "net": model.cfg.to_dict(),
        "train": cfg.to_dict() if cfg is not None else None,
    }
    return save_checkpoint(path, checkpoint_arrays(model, optimizer), meta)


def load_model(path, dtype=torch.float32, expect: Optional[NetConfig] = None):
    """Rebuild a model from a checkpoint; returns (model, arrays, meta)."""
    arrays, meta = load_checkpoint(path)
    net_cfg = NetConfig.from_dict(meta["net"])
    if expect is not None:
        for key in ("channels", "shift_channels", "window", "fusion_blocks", "extractor_blocks"):
            if getattr(expect, key) != getattr(net_cfg, key):
                raise DatastoreError(
                    f"checkpoint {key}={getattr(net_cfg, key)} does not match config {getattr(expect, key)}")
    model = ASFNet(net_cfg).to(dtype)
    model.load_param_arrays({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    return model, arrays, meta


def restore_optimizer(model, optimizer, arrays):
    for name, p in model.named_parameters():
        prefix = f"opt/{name}/"
        state = {k[len(prefix):]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith(prefix)}
        if state:
            for k in ("exp_avg", "exp_avg_sq"):
                state[k] = state[k].to(p.dtype)
            optimizer.state[p] = state


def latest_checkpoint(out_dir):
    ckpts = sorted(Path(out_dir).glob("ckpt_*.npz"), key=lambda p: int(p.stem.split("_")[1]))
    return ckpts[-1] if ckpts else None


# -- loops -----------------------------------------------------------------

def iteration_rng(seed, it, stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(it), int(stream)]))


def sample_real(entries, loader, rng, crop, length):
    entry = entries[int(rng.integers(len(entries)))]
    clip = loader(entry)
    T, H, W = clip.frames.shape[:3]
    if T < length or min(H, W) < crop:
        raise ClipTooSmallError(f"{entry.clip_id} too small for crop {crop} x {length}")
    t0 = int(rng.integers(0, T - length + 1))
    y0 = int(rng.integers(0, H - crop + 1))
    x0 = int(rng.integers(0, W - crop + 1))
    return VideoClip(clip.frames[t0:t0 + length, y0:y0 + crop, x0:x0 + crop].copy(), "real")


@dataclass
class TrainData:
    """Everything a training loop reads; built from manifests or in memory."""

    train: Manifest
    real: Optional[Manifest] = None
    streaks: Optional[StreakDatabase] = None

    def __post_init__(self):
        self.train_loader = ClipCache(self.train)
        self.real_loader = ClipCache(self.real) if self.real is not None else None
        self.real_entries = self.real.by_role("real") if self.real is not None else []


def train(data: TrainData, cfg: TrainConfig, mode: str, out_dir, resume=True, model=None):
    """Run ``cfg.iterations`` iterations of ``mode`` ("pretrain" or "orl").

    Writes ``ckpt_<iter>.npz`` every ``checkpoint_every`` iterations plus at
    the end, and appends one JSON line per iteration to ``train_log.jsonl``.
    Returns the final checkpoint path.
    """
    if mode not in ("pretrain", "orl"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "orl":
        if not data.real_entries:
            raise TrainingError("ORL needs clips with role 'real'")
        if data.streaks is None:
            raise TrainingError("ORL needs a streak database")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = cfg.torch_dtype
    start = 0
    ckpt = latest_checkpoint(out_dir) if resume else None
    if ckpt is not None:
        model, arrays, meta = load_model(ckpt, dtype, expect=cfg.net)
        optimizer = make_optimizer(model, cfg)
        restore_optimizer(model, optimizer, arrays)
        start = meta["iteration"]
        log.info("resuming from %s at iteration %d", ckpt, start)
    else:
        if model is None:
            if cfg.init_ckpt:
                model, _, _ = load_model(cfg.init_ckpt, dtype, expect=cfg.net)
            else:
                model = ASFNet(cfg.net, seed=cfg.seed).to(dtype)
        optimizer = make_optimizer(model, cfg)
    log_path = out_dir / "train_log.jsonl"
    if start == 0 and log_path.exists():
        log_path.unlink()
    final = out_dir / checkpoint_name(start)
    if start == 0:
        write_checkpoint(final, model, optimizer, 0, cfg, mode)
    with open(log_path, "a") as logf:
        for it in range(start + 1, cfg.iterations + 1):
            tic = time.perf_counter()
            sample = sample_batch(data.train, int(iteration_rng(cfg.seed, it, 0).integers(2 ** 31)),
                                  cfg.crop, cfg.length, loader=data.train_loader)
            if mode == "pretrain":
                l_su, l_un = supervised_step(model, optimizer, sample, cfg), 0.0
            else:
                rng = iteration_rng(cfg.seed, it, 1)
                real = sample_real(data.real_entries, data.real_loader, rng, cfg.crop, cfg.length)
                l_su, l_un = orl_step(model, optimizer, real, sample, data.streaks, rng, cfg)
            record = {"iter": it, "L_SU": l_su, "L_UN": l_un, "total": l_su + cfg.lambda_un * l_un,
                      "lr": cfg.lr, "wall_ms": round(1000 * (time.perf_counter() - tic), 3)}
            logf.write(json.dumps(record) + "\n")
            if it % cfg.checkpoint_every == 0 or it == cfg.iterations:
                logf.flush()
                final = write_checkpoint(out_dir / checkpoint_name(it), model, optimizer, it, cfg, mode)
    return final


def read_log(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
