"""Command-line interface.

Usage:
    combcn synth --n 4 --frames 32 --size 128 --seed 0 --out corpus/
    combcn prepare --input corpus/ --out samples/ --frames 32 --size 128
    combcn train --manifest samples/manifest.json --out run/ --strategy ours
    combcn infer --checkpoint run/final.ckpt --frames clip/ --mask regular --out result/
    combcn eval --pred result/frames --gt clip/ --mask result/mask.npy --out metrics.csv
    combcn diff --frames result/frames --out diffs/
    combcn paramdiff run/pretrain.ckpt run/final.ckpt --group 3dcn
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, sampleio
from .checkpoint import read_checkpoint
from .config import Strategy, TrainConfig
from .errors import EmptyMask, InpaintError
from .inference import (DIFF_GAIN, InpaintRequest, MaskSource, check_mask_nonempty,
                        compute_metrics, inpaint_video, temporal_diff)
from .net3d import Variant

log = logging.getLogger("combcn")


def _ratio(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B, got {text!r}")
    return a, b


def cmd_synth(args) -> int:
    videos = data.synth_corpus(args.n, args.frames, args.size, args.seed)
    out = Path(args.out)
    for i, v in enumerate(videos):
        sampleio.write_frames(out / f"clip_{i:03d}", v)
    log.info("wrote %d clips to %s", len(videos), out)
    return 0


def cmd_prepare(args) -> int:
    cfg = data.PipelineConfig(
        sample_frames=args.frames, target_size=args.size, downsample_rate=args.rate,
        crop_mode=args.crop, split_ratio=args.split,
    )
    out = Path(args.out) if args.out else sampleio.cache_dir() / "samples"
    out.mkdir(parents=True, exist_ok=True)
    root = Path(args.input)
    samples = []
    for src in sampleio.iter_clip_sources(root):
        frames = sampleio.read_frames(src)
        samples += data.extract_samples(frames, cfg, source_id=src.name)
    if not samples:
        raise InpaintError(f"{root}: no complete {cfg.sample_frames}-frame samples found")
    train, val = data.split_train_val(samples, cfg.split_ratio)
    cfg.mean_pixel = data.mean_pixel([s.clean for s in train])
    entries = []
    for i, s in enumerate(samples):
        seed = data.sample_seed(args.seed, s.source_id, s.frame_offset)
        s.mask = data.gen_regular_mask(s.clean.shape[0], cfg.target_size, seed,
                                       cfg.hole_lo_frac, cfg.hole_hi_frac)
        name = f"sample_{i:05d}.bin"
        sampleio.write_sample(out / name, s)
        entries.append({"file": name, "source_id": s.source_id,
                        "frame_offset": s.frame_offset,
                        "split": "train" if i < len(train) else "val"})
    sampleio.write_manifest(out / "manifest.json", entries, cfg)
    log.info("wrote %d train / %d val samples to %s", len(train), len(val), out)
    return 0


def _train_config(args) -> TrainConfig:
    d = {}
    if args.config:
        d.update(json.loads(Path(args.config).read_text()))
    overrides = {
        "strategy": args.strategy, "variant": args.variant, "seed": args.seed,
        "pretrain_iters": args.pretrain_iters, "joint_iters": args.joint_iters,
        "log_every": args.log_every, "checkpoint_every": args.checkpoint_every,
        "learning_rate": args.lr, "weight_decay": args.weight_decay, "alpha": args.alpha,
    }
    d.update({k: v for k, v in overrides.items() if v is not None})
    if args.reduced:
        d["reduced"] = True
    if args.no_fusion:
        d["fusion"] = False
    if Strategy(d.get("strategy", "ours")) is Strategy.T2 or d.get("fusion") is False:
        d.setdefault("pretrain_iters", 0)
    return TrainConfig.from_dict(d)


def cmd_train(args) -> int:
    from .training import train, write_reports_csv

    cfg = _train_config(args)
    train_set = sampleio.load_split(args.manifest, "train")
    val_set = sampleio.load_split(args.manifest, "val")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "losses.csv"
    write_reports_csv(csv_path, [], append=bool(args.resume))

    def on_report(rep):
        write_reports_csv(csv_path, [rep], append=True)
        log.info("%s %s it=%d l3=%.3f lc=%.3f total=%.3f", rep.phase.value, rep.split.value,
                 rep.iter, rep.loss_3dcn, rep.loss_combcn, rep.loss_total)

    train(train_set, val_set, cfg, out_dir=out, resume=args.resume, on_report=on_report)
    return 0


def cmd_infer(args) -> int:
    if args.mask in ("regular", "random"):
        source, path = MaskSource(args.mask), None
    else:
        source, path = MaskSource.FILE, Path(args.mask)
        check_mask_nonempty(sampleio.read_mask(path))
    req = InpaintRequest(
        checkpoint_path=Path(args.checkpoint), frames=Path(args.frames),
        mask_source=source, mask_path=path, seed=args.seed, output_dir=Path(args.out),
        emit_lowres=args.lowres, emit_diffs=args.diffs, resize=args.resize,
    )
    inpaint_video(req)
    return 0


def _video(path) -> np.ndarray:
    return np.stack([data.as_float_frame(f) for f in sampleio.read_frames(path)])


def cmd_eval(args) -> int:
    pred, gt = _video(args.pred), _video(args.gt)
    mask = sampleio.read_mask(args.mask)
    report = compute_metrics(pred, gt, mask)
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "frame", "l1_masked"])
        w.writerows(report.rows(args.video_id or Path(args.pred).name))
    print(f"{report.video:.6f}")
    return 0


def cmd_diff(args) -> int:
    diffs = temporal_diff(_video(args.frames), gain=args.gain)
    sampleio.write_frames(args.out, diffs[..., None])
    return 0


def cmd_paramdiff(args) -> int:
    a = read_checkpoint(args.a)["tensors"]
    b = read_checkpoint(args.b)["tensors"]
    prefix = f"{args.group}/" if args.group else ""
    names = sorted(n for n in a if n.startswith(prefix) and not n.startswith("extra/"))
    worst = 0.0
    for n in names:
        if n not in b or a[n].shape != b[n].shape:
            raise InpaintError(f"tensor {n} missing or reshaped")
        worst = max(worst, float((a[n].double() - b[n].double()).abs().max()))
    print(f"{len(names)} tensors, max |diff| = {worst:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="combcn", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic clip corpus")
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--frames", type=int, default=32)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prepare", help="cut clips into samples and write a manifest")
    s.add_argument("--input", required=True, help="directory of clip folders or video files")
    s.add_argument("--out", help="output directory (default: $COMBCN_CACHE/samples)")
    s.add_argument("--frames", type=int, default=32)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--rate", type=int, default=2)
    s.add_argument("--crop", choices=[c.value for c in data.CropMode], default="center_square")
    s.add_argument("--split", type=_ratio, default=(5, 1))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="train the networks")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--strategy", choices=[x.value for x in Strategy])
    s.add_argument("--variant", choices=[x.value for x in Variant])
    s.add_argument("--config", help="JSON file with TrainConfig fields")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--seed", type=int)
    s.add_argument("--pretrain-iters", type=int)
    s.add_argument("--joint-iters", type=int)
    s.add_argument("--log-every", type=int)
    s.add_argument("--checkpoint-every", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--weight-decay", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--reduced", action="store_true", help="use the small layer subsets")
    s.add_argument("--no-fusion", action="store_true", help="train the plain 2D baseline")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="inpaint a clip with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--mask", default="regular", help="'regular', 'random', or a .npy / PNG dir")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--lowres", action="store_true", help="also write the 3D network output")
    s.add_argument("--diffs", action="store_true", help="also write temporal diff images")
    s.add_argument("--resize", action="store_true", help="crop/resize frames to the trained size")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="masked l1 metrics against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--video-id")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("diff", help="successive-frame difference images")
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--gain", type=float, default=DIFF_GAIN)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_diff)

    s = sub.add_parser("paramdiff", help="compare tensors of two checkpoints")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--group", choices=["3dcn", "combcn"])
    s.set_defaults(func=cmd_paramdiff)
    return p


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InpaintError, OSError, ValueError) as e:
        print(f"combcn {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())
