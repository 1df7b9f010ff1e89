"""Downstream applications of a trained bundle: latent interpolation,
animation, arbitrary-width novel synthesis, paint- and edge-conditioned
generation, harmonization, and super-resolution.

All operations are read-only over the bundle (modules are switched to eval
mode) and deterministic: inference adds no latent noise.
"""

import math
import os
import shutil
import subprocess
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .imaging import apply_palette, resample, save_image
from .model import bicubic_upsample, decode, encode, inject_at_scale, to_image, to_tensor
from .trainer import TrainConfig
from .validation import check_binary_image, check_image, check_same_shape
from .warp import augment_sample

FEATHER_RADIUS_PX = 5
FEATHER_SIGMA = 2.0
SUPERRES_MAX_DIM = 4096


@dataclass
class AnimationSpec:
    """Frame grid and seeds for a latent-interpolation animation."""

    frame_count: int = 8
    seeds: tuple = (1, 2)
    loop_mode: str = "once"
    output_dir: str = None

    def __post_init__(self):
        if self.frame_count < 2:
            raise ValueError(f"frame_count must be >= 2, got {self.frame_count}")
        if self.loop_mode not in ("once", "ping-pong"):
            raise ValueError(
                f"loop_mode must be 'once' or 'ping-pong', got {self.loop_mode!r}"
            )
        if len(tuple(self.seeds)) != 2:
            raise ValueError("seeds must hold exactly two values")
        self.seeds = tuple(int(s) for s in self.seeds)


@dataclass
class HarmonizationJob:
    """A pasted-foreground composite, its mask, and the injection level."""

    composite: np.ndarray
    mask: np.ndarray
    injection_level: int = None


def _require_unconditional(bundle, op):
    if bundle.is_conditional:
        raise ValueError(
            f"{op} requires an unconditional bundle (with the variational "
            "front-end); this bundle was trained conditionally"
        )


def _require_source(bundle, source, op):
    actual = bundle.train_config.get("condition_source", "none")
    if bundle.encoder is not None or actual != source:
        raise ValueError(
            f"{op} requires a bundle trained conditionally with "
            f"condition_source={source!r}; this bundle has mode="
            f"{'conditional' if bundle.is_conditional else 'unconditional'}, "
            f"condition_source={actual!r}"
        )


def _bundle_device(bundle):
    return next(bundle.generator.parameters()).device


def _run_generator(bundle, x0, start_level=0):
    """Finest-level output for a coarse input of any proportional size."""
    with torch.no_grad():
        outs = bundle.generator(
            to_tensor(x0, device=_bundle_device(bundle)), start_level=start_level
        )
    return to_image(outs[-1]) if outs else check_image(x0).copy()


def _blend_codes(z1, z2, alpha):
    return z1.values * alpha + z2.values * (1.0 - alpha)


def interpolate(bundle, x1, x2, alpha):
    """Blend the codes of two coarsest-level images and generate.

    The blend weight follows alpha*z1 + (1-alpha)*z2: alpha=1 reproduces
    the pipeline on x1 alone, alpha=0 on x2.
    """
    _require_unconditional(bundle, "interpolate")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    bundle.eval_mode()
    x1 = check_image(x1, name="x1")
    x2 = check_image(x2, name="x2")
    for name, x in (("x1", x1), ("x2", x2)):
        if x.shape[:2] != tuple(bundle.coarsest_dims):
            raise ValueError(
                f"{name} dims {x.shape[:2]} must equal the coarsest level "
                f"{tuple(bundle.coarsest_dims)}"
            )
    z1 = encode(bundle.encoder, x1)
    z2 = encode(bundle.encoder, x2)
    blended = type(z1)(values=_blend_codes(z1, z2, alpha))
    x0 = decode(bundle.decoder, blended, noise_sigma=0.0, target_dims=bundle.coarsest_dims)
    return _run_generator(bundle, x0)


def _augmented_coarse(bundle, seed):
    """One augmentation of the training image, downscaled to the coarsest level."""
    cfg = TrainConfig.from_dict(bundle.train_config)
    rng = np.random.default_rng(seed)
    sample = augment_sample(bundle.train_image, None, cfg.augmentation, rng)
    return resample(sample.image, *bundle.coarsest_dims)


def animate(bundle, spec):
    """Frames sweeping the code blend between two augmentations.

    Produces frame_count+1 frames at alpha = i/T (frame 0 is the seed-2
    reconstruction, frame T the seed-1 one); ping-pong mode appends the
    reversed sequence minus both endpoints (2T frames total). Frames are
    written as zero-padded PNGs when spec.output_dir is set.
    """
    _require_unconditional(bundle, "animate")
    bundle.eval_mode()
    x1 = _augmented_coarse(bundle, spec.seeds[0])
    x2 = _augmented_coarse(bundle, spec.seeds[1])
    t = spec.frame_count
    frames = [interpolate(bundle, x1, x2, i / t) for i in range(t + 1)]
    if spec.loop_mode == "ping-pong":
        frames = frames + frames[1:-1][::-1]
    if spec.output_dir is not None:
        write_frames(frames, spec.output_dir)
    return frames


def write_frames(frames, out_dir):
    """Write frames as zero-padded numbered PNGs; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = os.path.join(out_dir, f"frame_{i:04d}.png")
        save_image(frame, p)
        paths.append(p)
    return paths


def encode_video(frames_dir, out_path, fps=10):
    """Optionally encode written frames into a video via ffmpeg.

    A missing encoder is a soft warning, not an error; returns the output
    path on success, None otherwise.
    """
    ffmpeg = shutil.which("ffmpeg")
    if ffmpeg is None:
        warnings.warn(
            "ffmpeg not found on PATH; skipping video encoding (frames "
            "remain available as PNGs)",
            RuntimeWarning,
            stacklevel=2,
        )
        return None
    pattern = os.path.join(frames_dir, "frame_%04d.png")
    cmd = [
        ffmpeg, "-y", "-framerate", str(fps), "-i", pattern,
        "-pix_fmt", "yuv420p", out_path,
    ]
    result = subprocess.run(cmd, capture_output=True)
    if result.returncode != 0:
        warnings.warn(
            f"ffmpeg failed (exit {result.returncode}); frames remain as PNGs",
            RuntimeWarning,
            stacklevel=2,
        )
        return None
    return out_path


def synthesize_novel(bundle, count, seeds=(1, 2), alpha=0.5):
    """Arbitrary-width synthesis by concatenating augmented copies.

    Two horizontal concatenations of `count` independently augmented copies
    of the training image are downscaled to the coarsest height, encoded
    (the encoder is fully convolutional, so width scales), blended at
    alpha, decoded, and upscaled. Output height equals the training height;
    width is about count times the training width.
    """
    _require_unconditional(bundle, "synthesize_novel")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    bundle.eval_mode()
    cfg = TrainConfig.from_dict(bundle.train_config)
    h, w = bundle.train_image.shape[:2]
    h0, w0 = bundle.coarsest_dims

    def build_concat(seed):
        parts = [
            augment_sample(
                bundle.train_image, None, cfg.augmentation,
                np.random.default_rng([seed, j]),
            ).image
            for j in range(count)
        ]
        concat = np.concatenate(parts, axis=1)
        wc = max(1, round(count * w * h0 / h))
        return resample(concat, h0, wc)

    c1 = build_concat(seeds[0])
    c2 = build_concat(seeds[1])
    z1 = encode(bundle.encoder, c1)
    z2 = encode(bundle.encoder, c2)
    blended = type(z1)(values=_blend_codes(z1, z2, alpha))
    x0 = decode(
        bundle.decoder, blended, noise_sigma=0.0, target_dims=c1.shape[:2]
    )
    return _run_generator(bundle, x0)


def paint2image(bundle, paint, with_sifid=False):
    """Turn a rough paint into an image in the training image's style.

    The paint is downscaled to the coarsest dims, snapped to the training
    palette, and fed through the generator. With with_sifid=True, returns
    (image, info) where info holds the single-image Frechet score of the
    output against the training image.
    """
    _require_source(bundle, "paint-quantized", "paint2image")
    bundle.eval_mode()
    paint = check_image(paint, name="paint")
    coarse = resample(paint, *bundle.coarsest_dims)
    coarse = apply_palette(coarse, bundle.palette)
    out = _run_generator(bundle, coarse)
    if not with_sifid:
        return out
    from .metrics import sifid_with_id

    value, extractor_id = sifid_with_id(out, bundle.train_image, extractor="auto")
    return out, {"sifid": value, "extractor_id": extractor_id}


def edges2image(bundle, edges):
    """Generate an image from a (binary) edge map."""
    _require_source(bundle, "edge-map", "edges2image")
    bundle.eval_mode()
    try:
        edges = check_binary_image(edges, name="edges")
    except ValueError:
        warnings.warn(
            "edge map is not binary; thresholding at 0 to {-1, +1}",
            RuntimeWarning,
            stacklevel=2,
        )
        edges = check_image(edges, name="edges")
        edges = np.where(edges > 0.0, 1.0, -1.0).astype(np.float32)
    coarse = resample(edges, *bundle.coarsest_dims)
    coarse = np.where(coarse > 0.0, 1.0, -1.0).astype(np.float32)
    return _run_generator(bundle, coarse)


def default_injection_level(bundle):
    """Middle of the chain: ceil(N/2) for N upscaling blocks."""
    return math.ceil(len(bundle.generator.blocks) / 2)


def harmonize(bundle, job):
    """Blend a pasted foreground into the training image's style.

    The composite is downscaled to the injection level's dims, run through
    the remaining blocks, and blended back into the composite under a
    feathered mask; pixels outside the dilated mask keep their original
    values exactly.
    """
    from scipy import ndimage

    composite = check_image(job.composite, name="composite")
    mask = check_binary_image(job.mask, name="mask")
    check_same_shape(composite, mask, "composite", "mask")
    n_blocks = len(bundle.generator.blocks)
    level = job.injection_level
    if level is None:
        level = default_injection_level(bundle)
    if not 0 <= level <= n_blocks - 1:
        raise ValueError(
            f"injection_level must be in [0, {n_blocks - 1}], got {level}"
        )
    if composite.shape[:2] != tuple(bundle.pyramid_spec.finest_dims):
        raise ValueError(
            f"composite dims {composite.shape[:2]} must equal the training "
            f"dims {tuple(bundle.pyramid_spec.finest_dims)}"
        )
    bundle.eval_mode()
    coarse = resample(composite, *bundle.pyramid_spec.level_dims[level])
    generated = inject_at_scale(bundle.generator, coarse, level)[-1]

    mask01 = mask[:, :, 0] > 0.0
    dilated = ndimage.binary_dilation(
        mask01, structure=np.ones((3, 3), dtype=bool), iterations=FEATHER_RADIUS_PX
    )
    weight = ndimage.gaussian_filter(mask01.astype(np.float64), sigma=FEATHER_SIGMA)
    weight = np.clip(weight, 0.0, 1.0) * dilated
    weight = weight[:, :, None]
    out = weight * generated.astype(np.float64) + (1.0 - weight) * composite
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def super_resolve(bundle, img, steps=1):
    """Lift an image beyond its resolution with the finest block.

    Each step bicubically upscales by the pyramid's inverse factor and adds
    the last block's residual; step t targets ceil(input * (1/r)^t), so the
    output dims are ceil(input * (1/r)^steps).
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    img = check_image(img)
    bundle.eval_mode()
    factor = 1.0 / bundle.pyramid_spec.scale_factor
    in_h, in_w = img.shape[:2]
    final_h = math.ceil(in_h * factor**steps)
    final_w = math.ceil(in_w * factor**steps)
    if max(final_h, final_w) > SUPERRES_MAX_DIM:
        raise ValueError(
            f"super-resolution target {final_h}x{final_w} exceeds the "
            f"configured maximum of {SUPERRES_MAX_DIM} px"
        )
    block = bundle.generator.blocks[-1]
    cur = to_tensor(img, device=_bundle_device(bundle))
    with torch.no_grad():
        for t in range(1, steps + 1):
            th = math.ceil(in_h * factor**t)
            tw = math.ceil(in_w * factor**t)
            up = bicubic_upsample(cur, th, tw)
            cur = up + block(up)
    return to_image(cur)
