"""Command-line surface: train a model, then drive every downstream task.

Each subcommand prints exactly one machine-readable JSON summary to stdout
and returns exit code 0 iff all requested artifacts were written. Progress
and diagnostics go to stderr. Training configs are JSON documents checked
against a published schema; schema violations are listed field by field
and exit with code 2.
"""

import argparse
import datetime
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .imaging import load_image, save_image
from .metrics import sifid_with_id
from .tasks import (
    AnimationSpec,
    HarmonizationJob,
    animate,
    default_injection_level,
    edges2image,
    encode_video,
    harmonize,
    paint2image,
    super_resolve,
    synthesize_novel,
    write_frames,
)
from .trainer import TrainConfig, load_checkpoint, train

CONFIG_SCHEMA_VERSION = 1

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": f"sologen training config (version {CONFIG_SCHEMA_VERSION})",
    "type": "object",
    "properties": {
        "config_version": {"const": CONFIG_SCHEMA_VERSION},
        "image_path": {"type": "string", "minLength": 1},
        "mode": {"enum": ["unconditional", "conditional"]},
        "condition_source": {"enum": ["none", "paint-quantized", "edge-map"]},
        "iterations": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "betas": {
            "type": "array",
            "items": {"type": "number", "minimum": 0, "maximum": 1},
            "minItems": 2,
            "maxItems": 2,
        },
        "alpha": {"type": "number", "minimum": 0},
        "noise_sigma": {"type": "number", "minimum": 0},
        "scale_factor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "min_dim": {"type": "integer", "minimum": 1},
        "max_dim": {"type": "integer", "minimum": 1},
        "augmentation": {
            "type": "object",
            "properties": {
                "crop_fraction_range": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "flip_probability": {"type": "number", "minimum": 0, "maximum": 1},
                "tps_magnitude": {"type": "number", "minimum": 0},
                "tps_grid": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer"},
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer"},
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "loss_mode": {"enum": ["vgg", "pixel"]},
        "palette_size": {"type": "integer", "minimum": 2},
        "edge_low": {"type": "number", "minimum": 0},
        "edge_high": {"type": "number", "exclusiveMinimum": 0},
        "channels": {"type": "integer", "minimum": 1},
        "device": {"type": "string"},
    },
    "required": ["image_path"],
    "additionalProperties": False,
}


class CliError(Exception):
    """User-facing command failure with an exit code."""

    def __init__(self, message, exit_code=1):
        super().__init__(message)
        self.exit_code = exit_code


def _emit(summary):
    print(json.dumps(summary))


def _load_config(args):
    if not args.config:
        raise CliError("--config is required for this command")
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}") from None

    import jsonschema

    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            path = "/".join(str(p) for p in err.absolute_path) or "(top level)"
            lines.append(f"  {path}: {err.message}")
        raise CliError("config schema violations:\n" + "\n".join(lines), exit_code=2)

    raw.pop("config_version", None)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.device is not None:
        raw["device"] = args.device
    try:
        return TrainConfig.from_dict(raw)
    except ValueError as exc:
        raise CliError(f"invalid config: {exc}", exit_code=2) from None


def _load_bundle(args):
    if not args.checkpoint:
        raise CliError("--checkpoint is required for this command")
    try:
        return load_checkpoint(args.checkpoint, device=args.device or "cpu")
    except (FileNotFoundError, ValueError) as exc:
        raise CliError(str(exc)) from None


def _require_out(args, what="--out"):
    if not args.out:
        raise CliError(f"{what} is required for this command")
    return args.out


def cmd_train(args):
    config = _load_config(args)
    out_dir = args.out or "sologen-run"
    os.makedirs(out_dir, exist_ok=True)

    def progress(i, report):
        if (i + 1) % 100 == 0 or i == 0:
            print(
                f"iter {i + 1}/{config.iterations} total={report.total:.5f}",
                file=sys.stderr,
            )

    started = datetime.datetime.now(datetime.timezone.utc)
    t0 = time.monotonic()
    bundle, log = train(config, out_dir=out_dir, progress=progress)
    wall = time.monotonic() - t0
    manifest = {
        "command": "train",
        "tool_version": __version__,
        "config": config.to_dict(),
        "seed": config.seed,
        "artifacts": {
            "final_checkpoint": os.path.join(out_dir, "final"),
            "log": os.path.join(out_dir, "log.jsonl"),
        },
        "timings": {
            "started": started.isoformat(),
            "wall_seconds": wall,
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    _emit(
        {
            "run_dir": out_dir,
            "final_checkpoint": manifest["artifacts"]["final_checkpoint"],
            "iterations": config.iterations,
            "final_total_loss": log[-1]["total"] if log else None,
        }
    )
    return 0


def cmd_animate(args):
    bundle = _load_bundle(args)
    out_dir = _require_out(args)
    spec = AnimationSpec(
        frame_count=args.frames,
        seeds=tuple(args.seeds),
        loop_mode=args.loop_mode,
        output_dir=None,
    )
    frames = animate(bundle, spec)
    paths = write_frames(frames, out_dir)
    video = None
    if args.video:
        video = encode_video(out_dir, args.video, fps=args.fps)
    _emit(
        {
            "frame_count": len(frames),
            "frames_dir": out_dir,
            "first_frame": paths[0],
            "video": video,
        }
    )
    return 0


def cmd_sample(args):
    bundle = _load_bundle(args)
    out_path = _require_out(args)
    img = synthesize_novel(
        bundle, count=args.count, seeds=tuple(args.seeds), alpha=args.alpha
    )
    save_image(img, out_path)
    _emit(
        {
            "output": out_path,
            "height": int(img.shape[0]),
            "width": int(img.shape[1]),
            "count": args.count,
            "alpha": args.alpha,
        }
    )
    return 0


def cmd_paint2image(args):
    bundle = _load_bundle(args)
    out_path = _require_out(args)
    paint = load_image(args.paint)
    img, info = paint2image(bundle, paint, with_sifid=True)
    save_image(img, out_path)
    _emit({"output": out_path, **info})
    return 0


def cmd_edges2image(args):
    bundle = _load_bundle(args)
    out_path = _require_out(args)
    edges = load_image(args.edges)
    img = edges2image(bundle, edges)
    save_image(img, out_path)
    _emit({"output": out_path, "height": int(img.shape[0]), "width": int(img.shape[1])})
    return 0


def cmd_harmonize(args):
    bundle = _load_bundle(args)
    out_path = _require_out(args)
    job = HarmonizationJob(
        composite=load_image(args.composite),
        mask=np.where(load_image(args.mask) > 0.0, 1.0, -1.0).astype(np.float32),
        injection_level=args.level,
    )
    img = harmonize(bundle, job)
    save_image(img, out_path)
    level = (
        job.injection_level
        if job.injection_level is not None
        else default_injection_level(bundle)
    )
    _emit({"output": out_path, "injection_level": level})
    return 0


def cmd_superres(args):
    bundle = _load_bundle(args)
    out_path = _require_out(args)
    img = super_resolve(bundle, load_image(args.image), steps=args.steps)
    save_image(img, out_path)
    _emit(
        {
            "output": out_path,
            "height": int(img.shape[0]),
            "width": int(img.shape[1]),
            "steps": args.steps,
        }
    )
    return 0


def cmd_sifid(args):
    a = load_image(args.image_a)
    b = load_image(args.image_b)
    value, extractor_id = sifid_with_id(a, b, extractor=args.extractor)
    _emit(
        {
            "image_a": args.image_a,
            "image_b": args.image_b,
            "sifid": value,
            "extractor_id": extractor_id,
        }
    )
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--checkpoint", help="checkpoint directory of a trained model")
    common.add_argument("--device", default=None, help="torch device (default cpu)")

    parser = argparse.ArgumentParser(
        prog="sologen",
        description="Train a generator on a single image and run its tasks.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train a model from a JSON config")

    p = sub.add_parser("animate", parents=[common], help="latent-interpolation frames")
    p.add_argument("--frames", type=int, default=8, help="interpolation steps T")
    p.add_argument("--seeds", type=int, nargs=2, default=[1, 2], metavar=("A", "B"))
    p.add_argument("--loop-mode", choices=["once", "ping-pong"], default="once")
    p.add_argument("--video", help="optional video file (needs ffmpeg on PATH)")
    p.add_argument("--fps", type=int, default=10)

    p = sub.add_parser("sample", parents=[common], help="novel arbitrary-width image")
    p.add_argument("--count", type=int, default=1, help="augmented copies to concatenate")
    p.add_argument("--seeds", type=int, nargs=2, default=[1, 2], metavar=("A", "B"))
    p.add_argument("--alpha", type=float, default=0.5)

    p = sub.add_parser("paint2image", parents=[common], help="paint-conditioned image")
    p.add_argument("--paint", required=True, help="paint image file")

    p = sub.add_parser("edges2image", parents=[common], help="edge-conditioned image")
    p.add_argument("--edges", required=True, help="edge-map image file")

    p = sub.add_parser("harmonize", parents=[common], help="blend a pasted foreground")
    p.add_argument("--composite", required=True, help="composite image file")
    p.add_argument("--mask", required=True, help="binary foreground mask file")
    p.add_argument("--level", type=int, default=None, help="injection level")

    p = sub.add_parser("superres", parents=[common], help="super-resolve an image")
    p.add_argument("--image", required=True, help="input image file")
    p.add_argument("--steps", type=int, default=1)

    p = sub.add_parser("sifid", parents=[common], help="single-image Frechet distance")
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)
    p.add_argument(
        "--extractor", choices=["auto", "patch", "inception"], default="auto"
    )
    return parser


_COMMANDS = {
    "train": cmd_train,
    "animate": cmd_animate,
    "sample": cmd_sample,
    "paint2image": cmd_paint2image,
    "edges2image": cmd_edges2image,
    "harmonize": cmd_harmonize,
    "superres": cmd_superres,
    "sifid": cmd_sifid,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, FileNotFoundError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
