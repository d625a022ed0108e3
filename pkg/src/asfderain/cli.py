"""Command-line entry point: ``asf <subcommand> [flags]``.

Exit codes: 0 success, 1 usage/config error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from .datastore import DatastoreError, Manifest, load_clip, save_clip, verify_manifest
from .rainsim import RainConfig, RainConfigError, read_config_file

log = logging.getLogger("asfderain")

SUBCOMMANDS = ("synth", "train", "orl", "infer", "eval", "verify-manifest")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="asf", description="Video rain-streak removal toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", type=Path, metavar="PATH", help="JSON or TOML config file")
        p.add_argument("--out", type=Path, metavar="PATH", help="output directory (or report file for eval)")
        p.add_argument("--in", dest="inp", type=Path, metavar="PATH", help="input clip directory, manifest or dataset root")
        p.add_argument("--ckpt", type=Path, metavar="PATH", help="model checkpoint (.npz)")
        p.add_argument("--count", type=int, metavar="N", help="number of clips to synthesize")
        p.add_argument("--seed", type=int, default=0, metavar="N", help="master random seed (default 0)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, repeatable; dotted keys reach nested tables")
        p.add_argument("--iterations", type=int, metavar="N", help="training iterations (overrides the config)")
    return parser


_HELP = {
    "synth": "render rain streak clips, composite them on procedural clean video, write a manifest",
    "train": "supervised pretraining on a synthetic train manifest",
    "orl": "online re-degraded learning from a pretrained checkpoint",
    "infer": "derain one clip directory",
    "eval": "score a checkpoint on a test manifest and write a metrics report",
    "verify-manifest": "check every manifest entry against the clip on disk",
}


def data_root(args):
    if args.inp is not None:
        return args.inp
    env = os.environ.get("ASF_DATA_ROOT")
    return Path(env) if env else None


def _load_config(path):
    if path is None:
        return {}
    if not path.exists():
        raise UsageError(f"config not found: {path}")
    try:
        return read_config_file(path)
    except Exception as exc:  # parse errors from json/toml
        raise UsageError(f"cannot parse config {path}: {exc}") from exc


def _require(args, *names):
    missing = ["--" + ("in" if n == "inp" else n) for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} requires {' '.join(missing)}")


# -- synth -----------------------------------------------------------------

VIDEO_DEFAULTS = {"frames": 8, "height": 64, "width": 64, "split": "train"}


def cmd_synth(args):
    from .dataset import build_dataset
    from .trainer import ConfigError, _coerce

    _require(args, "out", "count")
    raw = _load_config(args.config)
    rain = dict(raw.get("rain", {k: v for k, v in raw.items() if k != "video"}))
    video = dict(VIDEO_DEFAULTS, **raw.get("video", {}))
    for item in args.override:
        key, _, value = item.partition("=")
        section, _, name = key.rpartition(".")
        if section in ("", "rain") and name in {f.name for f in fields(RainConfig)}:
            rain[name] = _coerce(value, getattr(RainConfig(), name))
        elif section == "video" and name in VIDEO_DEFAULTS:
            video[name] = _coerce(value, VIDEO_DEFAULTS[name])
        else:
            raise ConfigError(f"unknown synth override {key!r}")
    rain["seed"] = args.seed
    cfg = RainConfig.from_dict(rain)
    manifest = build_dataset(args.out, cfg, args.count, int(video["frames"]),
                             (int(video["height"]), int(video["width"])), args.seed, video["split"])
    print(f"wrote {len(manifest.entries)} manifest entries to {args.out}")
    return 0


# -- training --------------------------------------------------------------

def _train_config(args):
    from .trainer import TrainConfig, apply_overrides

    raw = _load_config(args.config)
    cfg = TrainConfig.from_dict(raw)
    apply_overrides(cfg, args.override)
    cfg.seed = args.seed
    if args.iterations is not None:
        cfg.iterations = args.iterations
    root = data_root(args)
    for name in ("train_manifest", "real_manifest", "streak_manifest", "test_manifest", "init_ckpt"):
        value = getattr(cfg, name)
        if value and root is not None and not Path(value).is_absolute():
            setattr(cfg, name, str(root / value))
    # an explicit --ckpt is a path relative to the working directory
    if args.ckpt is not None:
        cfg.init_ckpt = str(args.ckpt)
    return cfg


def _train(args, mode):
    from .trainer import StreakDatabase, TrainData, train

    _require(args, "config", "out")
    cfg = _train_config(args)
    if not cfg.train_manifest:
        raise UsageError("config must name train_manifest")
    data = TrainData(Manifest.load(cfg.train_manifest))
    if mode == "orl":
        if not cfg.init_ckpt:
            raise UsageError("orl needs a pretrained checkpoint (--ckpt or init_ckpt)")
        if not cfg.real_manifest or not cfg.streak_manifest:
            raise UsageError("orl config must name real_manifest and streak_manifest")
        data = TrainData(data.train, Manifest.load(cfg.real_manifest),
                         StreakDatabase.from_manifest(Manifest.load(cfg.streak_manifest)))
    path = train(data, cfg, mode, args.out)
    print(f"checkpoint: {path}")
    return 0


def cmd_train(args):
    return _train(args, "pretrain")


def cmd_orl(args):
    return _train(args, "orl")


# -- inference / evaluation -------------------------------------------------

def cmd_infer(args):
    from .trainer import load_model

    _require(args, "ckpt", "inp", "out")
    model, _, _ = load_model(args.ckpt)
    clip = load_clip(args.inp, "rainy")
    save_clip(model.restore(clip), args.out)
    print(f"restored {len(clip)} frames to {args.out}")
    return 0


def cmd_eval(args):
    from .metrics import evaluate
    from .trainer import load_model

    _require(args, "ckpt", "out")
    root = data_root(args)
    if root is None:
        raise UsageError("eval needs --in (test manifest) or ASF_DATA_ROOT")
    model, _, meta = load_model(args.ckpt)
    manifest = Manifest.load(root)
    report = evaluate(model.restore, manifest,
                      meta={"checkpoint": args.ckpt.name, "iteration": meta["iteration"], "dataset": str(root.name)})
    out = args.out if args.out.suffix == ".json" else args.out / "report.json"
    report.save(out)
    m = report.means
    print(f"psnr_y={m['psnr_y']:.4f} ssim={m['ssim']:.4f} tlp={m['tlp']:.6f} -> {out}")
    return 0


def cmd_verify_manifest(args):
    root = data_root(args)
    if root is None:
        raise UsageError("verify-manifest needs --in or ASF_DATA_ROOT")
    problems = verify_manifest(Manifest.load(root))
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        raise DatastoreError(f"{len(problems)} manifest entries do not match disk")
    print("manifest ok")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "orl": cmd_orl,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "verify-manifest": cmd_verify_manifest,
}


def run(argv=None):
    from .trainer import ConfigError, TrainingError

    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ConfigError, RainConfigError) as exc:
        print(f"usage error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (DatastoreError, TrainingError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
