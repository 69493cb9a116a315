"""Command-line interface.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys

import numpy as np

from . import bench, pipeline
from .config import ConfigError, RunConfig
from .events import EventFormatError, parse_events
from .imageio import ImageFormatError, atomic_write_bytes, atomic_write_text, read_image, write_image
from .losses import total_loss
from .model import EvRWKV
from .synthetic import make_pair
from .tensor import no_grad
from .train import NumericalError, train_toy

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
PROXY_NOTE = "perceptual term uses a fixed-seed 3-stage conv proxy, not a pretrained classifier"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="JSON run configuration; flags override its values")
    p.add_argument("--seed", type=int, help="seed for weights and synthetic data")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
    p.add_argument("--no-eisfe", action="store_true", help="replace the frequency/spatial fusion with a 1x1 conv")
    p.add_argument("--no-spatial-mix", action="store_true", help="make every spatial mix an identity")
    p.add_argument("--no-channel-mix", action="store_true", help="make every channel mix an identity")
    p.add_argument("--no-ms-ssim", action="store_true", help="drop the MS-SSIM loss term")
    p.add_argument("--wkv-exponent", choices=("vrwkv", "grouped"))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _window(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-start", type=float, help="event window start (microseconds)")
    p.add_argument("--t-end", type=float, help="event window end (microseconds)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="evrwkv", description="Event-guided low-light enhancement toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("voxelize", parents=[common], help="bin an event file into a voxel grid")
    p.add_argument("events", help="event file (.csv or .bin)")
    p.add_argument("--bins", type=int, help="temporal bins (default from config, 32)")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    _window(p)

    p = sub.add_parser("enhance", parents=[common], help="enhance a low-light image with its events")
    p.add_argument("image", help="low-light PPM")
    p.add_argument("events", help="event file (.csv or .bin)")
    p.add_argument("--weights", metavar="NPZ", help="checkpoint from train-toy (default: seeded init)")
    p.add_argument("--gt", metavar="PPM", help="ground truth; adds metrics.json")
    _window(p)

    p = sub.add_parser("train-toy", parents=[common], help="overfit one image pair")
    p.add_argument("--low", metavar="PPM")
    p.add_argument("--gt", metavar="PPM")
    p.add_argument("--events", metavar="FILE")
    p.add_argument("--size", type=int, default=64, help="synthetic pair extent when no files are given")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss-report", action="store_true",
                   help="print the final value of each loss term and write loss_report.json")
    _window(p)

    p = sub.add_parser("bench-wkv", parents=[common], help="time quadratic vs linear WKV")
    p.add_argument("--lengths", type=int, nargs="+", default=list(bench.DEFAULT_LENGTHS))
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--precision", choices=("float64", "float32"))

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check per parameter group")
    p.add_argument("--groups", nargs="*", choices=pipeline.GROUPS,
                   help="groups to check (default: all present); give none for an empty report")
    p.add_argument("--entries", type=int, default=6, help="entries probed per group")

    p = sub.add_parser("metrics", parents=[common], help="PSNR/SSIM/MS-SSIM of an image pair as JSON")
    p.add_argument("pred")
    p.add_argument("target")

    sub.add_parser("describe", parents=[common], help="parameter ledger of the configured model")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    for flag, key in (("no_eisfe", "eisfe"), ("no_spatial_mix", "spatial_mix"),
                      ("no_channel_mix", "channel_mix"), ("no_ms_ssim", "ms_ssim_loss")):
        if getattr(args, flag):
            changes[key] = False
    if args.wkv_exponent:
        changes["wkv_exponent"] = args.wkv_exponent
    for attr in ("steps", "lr", "precision", "bins", "t_start", "t_end"):
        val = getattr(args, attr, None)
        if val is not None:
            changes[attr] = val
    return cfg.replace(**changes) if changes else cfg


def _out(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _check_shapes(image: np.ndarray, events) -> None:
    if image.ndim != 3:
        raise UsageError("expected an RGB (P6) image")
    if (events.height, events.width) != image.shape[1:]:
        raise UsageError(f"event sensor {events.height}x{events.width} does not match image "
                         f"{image.shape[1]}x{image.shape[2]}")


def cmd_voxelize(args, cfg: RunConfig) -> int:
    ev = parse_events(args.events, height=args.height, width=args.width)
    grid = pipeline.event_voxels(ev, cfg, args.height, args.width)
    buf = _npy_bytes(grid)
    atomic_write_bytes(_out(args, "voxel.npy"), buf)
    total = np.abs(grid).sum(axis=0)
    write_image(_out(args, "voxel_preview.pgm"), total / total.max() if total.max() > 0 else total)
    print(f"{len(ev)} events -> {grid.shape[0]}x{grid.shape[1]}x{grid.shape[2]} voxel grid in {args.out}")
    return EXIT_OK


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def cmd_enhance(args, cfg: RunConfig) -> int:
    image = read_image(args.image)
    ev = parse_events(args.events, height=image.shape[-2], width=image.shape[-1])
    _check_shapes(image, ev)
    model = pipeline.load_checkpoint(args.weights, cfg if args.config else None) if args.weights else EvRWKV(cfg)
    voxel = pipeline.event_voxels(ev, model.config, t_start=cfg.t_start, t_end=cfg.t_end)
    target = read_image(args.gt) if args.gt else None
    res = pipeline.enhance(image, voxel, model, target)
    if not np.all(np.isfinite(res.raw)):
        raise NumericalError("enhanced image contains non-finite values")
    write_image(_out(args, "enhanced.ppm"), res.image)
    if res.metrics is not None:
        _write_json(_out(args, "metrics.json"), res.metrics)
        print(json.dumps(res.metrics))
    return EXIT_OK


def cmd_train_toy(args, cfg: RunConfig) -> int:
    given = [args.low, args.gt, args.events]
    if any(given) and not all(given):
        raise UsageError("--low, --gt and --events must be given together")
    if all(given):
        low, gt = read_image(args.low), read_image(args.gt)
        ev = parse_events(args.events, height=low.shape[-2], width=low.shape[-1])
        _check_shapes(low, ev)
    else:
        pair = make_pair(cfg.seed, args.size, args.size)
        low, gt, ev = pair.low, pair.sharp, pair.events
    if cfg.steps > 2000:
        raise UsageError("train-toy is limited to 2000 steps")
    voxel = pipeline.event_voxels(ev, cfg)
    res = train_toy(low, gt, voxel, cfg)
    atomic_write_text(_out(args, "loss.csv"), res.loss_csv())
    pipeline.save_checkpoint(_out(args, "checkpoint.npz"), res.model)
    write_image(_out(args, "enhanced.ppm"), np.clip(res.output, 0, 1))
    report = {
        "steps": len(res.losses), "psnr_start_db": res.psnr_start, "psnr_end_db": res.psnr_end,
        "psnr_gain_db": res.psnr_gain, "ssim_start": res.ssim_start, "ssim_end": res.ssim_end,
        "final_loss": res.losses[-1] if res.losses else None, "note": PROXY_NOTE,
    }
    _write_json(_out(args, "train_report.json"), report)
    if args.loss_report:
        parts = loss_breakdown(res.output, gt, cfg)
        _write_json(_out(args, "loss_report.json"), {"terms": parts, "weights": cfg.loss_weights().as_tuple(),
                                                     "note": PROXY_NOTE})
        for name, val in parts.items():
            print(f"{name:<15} {val:.6f}")
        print(f"note: {PROXY_NOTE}")
    print(f"PSNR {res.psnr_start:.2f} -> {res.psnr_end:.2f} dB (gain {res.psnr_gain:.2f}); "
          f"SSIM {res.ssim_start:.4f} -> {res.ssim_end:.4f}")
    return EXIT_OK


def loss_breakdown(pred: np.ndarray, target: np.ndarray, cfg: RunConfig) -> dict:
    """Unweighted value of every active loss term."""
    parts: dict = {}
    with no_grad():
        total_loss(pred, target, cfg.loss_weights(), charbonnier_global=cfg.charbonnier_global, parts=parts)
    return parts


def cmd_bench_wkv(args, cfg: RunConfig) -> int:
    def progress(impl, T, sec):
        logging.getLogger(__name__).info("%s T=%d %.4fs", impl, T, sec)

    res = bench.bench_wkv(args.lengths, args.channels, args.repeats, cfg.seed, cfg.precision, progress=progress)
    atomic_write_text(_out(args, "bench_wkv.csv"), res.csv())
    sys.stdout.write(res.csv())
    print(res.summary())
    if not res.agrees:
        print(f"implementations disagree beyond {bench.TOLERANCE[res.precision]:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    report = pipeline.model_gradcheck(cfg, groups=args.groups, entries_per_group=args.entries)
    sys.stdout.write(report.text())
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_metrics(args, cfg: RunConfig) -> int:
    pred, target = read_image(args.pred), read_image(args.target)
    if pred.shape != target.shape:
        raise UsageError(f"image shapes differ: {pred.shape} vs {target.shape}")
    m = pipeline.image_metrics(pred, target)
    if args.out != ".":
        _write_json(_out(args, "metrics.json"), m)
    print(json.dumps(m, sort_keys=True))
    return EXIT_OK


def cmd_describe(args, cfg: RunConfig) -> int:
    sys.stdout.write(pipeline.describe(EvRWKV(cfg)))
    return EXIT_OK


COMMANDS = {
    "voxelize": cmd_voxelize, "enhance": cmd_enhance, "train-toy": cmd_train_toy, "bench-wkv": cmd_bench_wkv,
    "gradcheck": cmd_gradcheck, "metrics": cmd_metrics, "describe": cmd_describe,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (NumericalError, FloatingPointError) as exc:
        print(f"evrwkv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, ImageFormatError, EventFormatError, ValueError, OSError) as exc:
        print(f"evrwkv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
