"""Command-line entry point: ``ffcvsr {prepare-data,train,infer,evaluate,profile}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset, metrics
from .config import SCHEMA, ConfigError, RunConfig, parse_config_text
from .frames import FrameStore, read_rgb, write_frame, write_rgb
from .inference import InferenceSession
from .model import ModelConfig, load_weights
from .resample import bicubic_upsample, rgb_to_chroma, rgb_to_luma, ycbcr_to_rgb
from .tensor import Tensor
from .trainer import OptimizerState, load_optimizer_state, lr_at, save_checkpoint, train

COMMANDS = ("prepare-data", "train", "infer", "evaluate", "profile")


def _add_schema_flags(parser: argparse.ArgumentParser, command: str) -> None:
    for key, entry in SCHEMA.items():
        if command not in entry.commands:
            continue
        flag = "--" + key.replace("_", "-")
        if entry.parse.__name__ == "_bool":
            parser.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None, help=entry.help)
        else:
            parser.add_argument(flag, dest=key, default=None, metavar="V", help=f"{entry.help} (default {entry.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffcvsr", description="Recurrent video super-resolution.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("prepare-data", help="extract LR/HR training clips from frame directories")
    p.add_argument("--in", dest="inputs", action="append", required=True, metavar="DIR", help="source frame directory (repeatable)")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("train", help="train both networks jointly")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--out", required=True, metavar="WEIGHTS", help="weight checkpoint to write")
    p.add_argument("--init", metavar="WEIGHTS", help="resume from a checkpoint (optimizer sidecar used if present)")
    p.add_argument("--val", metavar="MANIFEST", help="held-out clips for periodic validation PSNR")
    p.add_argument("--steps", dest="total_steps", default=None, metavar="N", help="alias for --total-steps")

    p = sub.add_parser("infer", help="super-resolve a frame directory")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="input", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--luma", action="store_true", help="convert color input frames to luma")
    p.add_argument("--color", action="store_true", help="color input: SR the luma, bicubic chroma, write RGB")

    p = sub.add_parser("evaluate", help="PSNR/SSIM of an SR directory against HR")
    p.add_argument("--sr", required=True, metavar="DIR")
    p.add_argument("--hr", required=True, metavar="DIR")
    p.add_argument("--out", metavar="FILE", help="report path (default: stdout)")

    p = sub.add_parser("profile", help="temporal profile image of one frame row")
    p.add_argument("--in", dest="input", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="IMAGE")

    for name, action in sub.choices.items():
        action.add_argument("--config", metavar="FILE", help="key = value configuration file")
        _add_schema_flags(action, name)
    return parser


def _run_config(args) -> RunConfig:
    file_values = {}
    if args.config:
        file_values = parse_config_text(Path(args.config).read_text(encoding="utf-8"), args.config)
    overrides = {k: getattr(args, k) for k in SCHEMA if hasattr(args, k)}
    return RunConfig.build(file_values, overrides)


def cmd_prepare_data(args, cfg: RunConfig) -> None:
    stores = [FrameStore.open(d) for d in args.inputs]
    manifest = dataset.prepare_dataset(
        stores, args.out, scale=cfg.scale, pyramid_factors=cfg.pyramid_factors,
        patch_size=cfg.patch_size, clip_length=cfg.clip_length, mad_threshold=cfg.mad_threshold,
    )
    print(f"clips\t{len(manifest.entries)}")
    print(f"manifest\t{Path(args.out) / 'manifest.tsv'}")


def cmd_train(args, cfg: RunConfig) -> None:
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config()
    clips = dataset.load_clips(args.data)
    if any(len(c) != train_cfg.clip_length for c in clips):
        raise ValueError(f"manifest clips do not all have clip_length {train_cfg.clip_length}")
    val = dataset.load_clips(args.val) if args.val else []
    weights = optimizer = None
    if args.init:
        weights = load_weights(args.init, model_cfg)
        sidecar = Path(str(args.init) + ".opt")
        optimizer = load_optimizer_state(args.init, train_cfg) if sidecar.exists() else OptimizerState.for_weights(weights, train_cfg)

    out = Path(args.out)
    rows = ["step\tloss\tlr"]

    def record(step, loss):
        rows.append(f"{step}\t{loss:.9g}\t{lr_at(step - 1, train_cfg):g}")

    result = train(clips, model_cfg, train_cfg, weights, optimizer, val, callback=record)
    save_checkpoint(out, result.weights, result.optimizer)
    Path(str(out) + ".loss.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    if result.validation:
        Path(str(out) + ".val.tsv").write_text(
            "step\tpsnr_db\n" + "".join(f"{s}\t{p:.4f}\n" for s, p in result.validation), encoding="utf-8")
    final = result.losses[-1] if result.losses else float("nan")
    print(f"steps\t{result.optimizer.step}")
    print(f"final_loss\t{final:.9g}")


def cmd_infer(args, cfg: RunConfig) -> None:
    weights = load_weights(args.weights)
    model_cfg = ModelConfig.from_weights(weights)
    src = FrameStore.open(args.input)
    dst = FrameStore.create(args.out, src.count, src.prefix, src.width, "png")
    session = InferenceSession(weights, model_cfg, cfg.reset_period, cfg.first_frame_mode)

    chroma = []

    def frames():
        for i in range(1, src.count + 1):
            if args.color:
                rgb = read_rgb(src.path(i))
                planes = rgb[..., 0], rgb[..., 1], rgb[..., 2]
                chroma.append(rgb_to_chroma(*planes))
                yield rgb_to_luma(*planes)
            else:
                yield src.read(i, luma=args.luma)

    start = time.perf_counter()
    for i, sr in enumerate(session.run(frames()), start=1):
        if args.color:
            cb, cr = (bicubic_upsample(Tensor(c[None, None].astype(np.float32)), model_cfg.scale).data[0, 0]
                      for c in chroma.pop(0))
            write_rgb(ycbcr_to_rgb(np.clip(sr.data[0, 0], 0, 1), cb, cr), dst.path(i))
        else:
            dst.write(i, sr)
    elapsed = time.perf_counter() - start
    print(f"frames\t{src.count}")
    print(f"ms_per_frame\t{1000.0 * elapsed / max(src.count, 1):.3f}")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    sr, hr = FrameStore.open(args.sr), FrameStore.open(args.hr)
    if len(sr) != len(hr):
        raise ValueError(f"{args.sr} has {len(sr)} frames but {args.hr} has {len(hr)}")
    report = metrics.evaluate_video(list(sr.frames()), list(hr.frames()), cfg.border_crop, cfg.quantize)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_profile(args, cfg: RunConfig) -> None:
    store = FrameStore.open(args.input)
    profile = metrics.temporal_profile(list(store.frames()), cfg.row)
    write_frame(profile, args.out)


HANDLERS = {
    "prepare-data": cmd_prepare_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "profile": cmd_profile,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    try:
        HANDLERS[args.command](args, cfg)
    except Exception as exc:  # one-line diagnostics for scripting
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
