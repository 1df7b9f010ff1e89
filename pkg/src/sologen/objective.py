"""Training losses: multi-scale perceptual upscaling loss, coarsest-level
reconstruction, KL penalty, and the combined objective.

Two distance modes exist. "vgg" is the intended perceptual distance — mean
absolute differences between channel-normalized activations of a fixed
pretrained VGG-16 at the first four pooling stages, plus a small
pixel-space term. "pixel" is a documented fallback (plain mean absolute
error) so the full test suite runs without pretrained weights; it is also
what the acceptance tests use.

Pretrained weights are looked up in the directory named by the
SOLOGEN_WEIGHTS_DIR environment variable (torchvision's published vgg16
checkpoint file); their absence in vgg mode is a hard, descriptive error.
"""

import functools
import glob
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .imaging import pyramid_like, resample
from .model import LatentCode, to_tensor
from .validation import check_image, check_same_shape

LOSS_MODES = ("vgg", "pixel")
DEFAULT_KL_ALPHA = 1e-3
WEIGHTS_DIR_ENV = "SOLOGEN_WEIGHTS_DIR"
# Weight of the pixel-space term inside the vgg-mode distance.
PIXEL_TERM_WEIGHT = 0.1


@dataclass
class LossReport:
    """Per-iteration loss bookkeeping; total is the exact sum of the terms."""

    upscaling: float
    reconstruction_l0: float
    kl: float
    total: float
    per_level: list = field(default_factory=list)

    def to_dict(self):
        return {
            "upscaling": self.upscaling,
            "reconstruction_l0": self.reconstruction_l0,
            "kl": self.kl,
            "total": self.total,
            "per_level": list(self.per_level),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            upscaling=d["upscaling"],
            reconstruction_l0=d["reconstruction_l0"],
            kl=d["kl"],
            total=d["total"],
            per_level=list(d.get("per_level", [])),
        )


class _VggFeatures(nn.Module):
    """Frozen VGG-16 prefix with taps after each of the first 4 pools."""

    TAP_INDICES = (4, 9, 16, 23)  # MaxPool2d positions in vgg16.features

    def __init__(self, state_dict):
        super().__init__()
        from torchvision.models import vgg16

        net = vgg16(weights=None)
        net.load_state_dict(state_dict)
        self.features = net.features[: self.TAP_INDICES[-1] + 1]
        for p in self.features.parameters():
            p.requires_grad_(False)
        self.eval()
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        self.register_buffer("mean", mean)
        self.register_buffer("std", std)

    def forward(self, x):
        # x in [-1, 1] -> ImageNet-normalized [0, 1]
        x = ((x + 1.0) / 2.0 - self.mean) / self.std
        taps = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.TAP_INDICES:
                taps.append(x)
        return taps


@functools.lru_cache(maxsize=1)
def _vgg_extractor():
    weights_dir = os.environ.get(WEIGHTS_DIR_ENV, "")
    candidates = sorted(glob.glob(os.path.join(weights_dir, "vgg16*.pth"))) if weights_dir else []
    if not candidates:
        raise RuntimeError(
            "vgg loss mode needs pretrained VGG-16 weights. Download "
            "torchvision's vgg16 checkpoint (vgg16-*.pth) into a directory "
            f"and point the {WEIGHTS_DIR_ENV} environment variable at it, "
            "or use the documented pixel-only mode (loss_mode='pixel')."
        )
    state = torch.load(candidates[0], map_location="cpu", weights_only=True)
    return _VggFeatures(state)


def _channel_normalize(feat, eps=1e-8):
    norm = torch.sqrt((feat**2).sum(dim=1, keepdim=True) + eps)
    return feat / norm


def distance_t(a, b, mode="vgg"):
    """Distance between two NCHW tensors in the chosen mode (differentiable)."""
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
    pixel = torch.mean(torch.abs(a - b))
    if mode == "pixel":
        return pixel
    extractor = _vgg_extractor().to(device=a.device)
    taps_a = extractor(a)
    taps_b = extractor(b)
    total = PIXEL_TERM_WEIGHT * pixel
    for fa, fb in zip(taps_a, taps_b):
        total = total + torch.mean(
            torch.abs(_channel_normalize(fa) - _channel_normalize(fb))
        )
    return total


def perceptual_distance(a, b, mode="vgg"):
    """Distance between two images; >= 0, zero iff identical in pixel mode."""
    a = check_image(a, name="a")
    b = check_image(b, name="b")
    check_same_shape(a, b, "a", "b")
    with torch.no_grad():
        return float(distance_t(to_tensor(a), to_tensor(b), mode=mode))


def upscaling_loss(preds, pyramid, mode="vgg"):
    """Sum of per-level distances between predictions and pyramid levels 1..N.

    Returns (total, per_level). preds must hold one image per pyramid level
    above the coarsest, at exactly those dims.
    """
    levels = pyramid.levels if hasattr(pyramid, "levels") else list(pyramid)
    expected = levels[1:]
    if len(preds) != len(expected):
        raise ValueError(
            f"prediction count {len(preds)} does not match pyramid levels "
            f"above coarsest ({len(expected)})"
        )
    per_level = []
    for n, (p, actual) in enumerate(zip(preds, expected), start=1):
        p = check_image(p, name=f"preds[{n - 1}]")
        if p.shape != actual.shape:
            raise ValueError(
                f"prediction for level {n} has dims {p.shape[:2]}, "
                f"expected {actual.shape[:2]}"
            )
        per_level.append(perceptual_distance(p, actual, mode=mode))
    return float(sum(per_level)), per_level


def kl_loss(code, alpha):
    """alpha * sum(z^2) over all latent elements."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    values = code.values if isinstance(code, LatentCode) else code
    if isinstance(values, torch.Tensor):
        values = values.detach().cpu().numpy()
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("latent code contains non-finite values")
    return float(alpha * np.sum(values**2))


def prepare_condition(bundle, condition):
    """Coarsest-level conditioning input for a (possibly augmented) condition.

    Downscales to the coarsest pyramid dims, then re-snaps to the bundle's
    training palette (paint source) or re-binarizes (edge source), since
    resampling de-quantizes the map.
    """
    from .imaging import apply_palette

    condition = check_image(condition, name="condition")
    coarse = resample(condition, *bundle.coarsest_dims)
    source = bundle.train_config.get("condition_source", "none")
    if source == "paint-quantized":
        if bundle.palette is None:
            raise ValueError("bundle has no stored palette for paint conditioning")
        return apply_palette(coarse, bundle.palette)
    if source == "edge-map":
        return np.where(coarse > 0.0, 1.0, -1.0).astype(np.float32)
    return coarse


def total_loss(bundle, sample, alpha=DEFAULT_KL_ALPHA, noise_sigma=0.01, rng=None):
    """Combined objective on one augmented sample.

    Unconditional mode: KL penalty + coarsest reconstruction through the
    encoder/decoder + upscaling loss with the generator fed the decoded
    coarsest image. Conditional mode: upscaling loss only, generator fed
    the preprocessed condition.

    Returns (loss, report): the scalar tensor to backprop and the float
    bookkeeping. The caller's module train/eval mode is left untouched.
    """
    mode = bundle.train_config.get("loss_mode", "vgg")
    ref = next(bundle.generator.parameters())
    device, dtype = ref.device, ref.dtype
    pyr_np = pyramid_like(sample.image, bundle.pyramid_spec.level_dims)
    levels = [to_tensor(lv, device=device, dtype=dtype) for lv in pyr_np]
    x0 = levels[0]

    zero = torch.zeros((), device=device, dtype=dtype)
    if bundle.is_conditional:
        if sample.condition is None:
            raise ValueError("conditional bundle requires a sample with a condition")
        coarse_cond = prepare_condition(bundle, sample.condition)
        gen_input = to_tensor(coarse_cond, device=device, dtype=dtype)
        kl_t = zero
        l0_t = zero
    else:
        z = bundle.encoder(x0)
        kl_t = alpha * torch.sum(z**2)
        if noise_sigma > 0:
            if rng is None:
                rng = np.random.default_rng()
            eps = rng.standard_normal(size=tuple(z.shape)) * noise_sigma
            z_in = z + torch.as_tensor(eps, dtype=z.dtype, device=device)
        else:
            z_in = z
        gen_input = bundle.decoder(z_in, bundle.coarsest_dims)
        l0_t = distance_t(gen_input, x0, mode=mode)

    preds = bundle.generator(gen_input)
    per_level_t = [
        distance_t(p, actual, mode=mode) for p, actual in zip(preds, levels[1:])
    ]
    upscale_t = sum(per_level_t, zero)
    total = kl_t + l0_t + upscale_t

    def as_float(t):
        return float(t.detach()) if isinstance(t, torch.Tensor) else float(t)

    up_f, l0_f, kl_f = as_float(upscale_t), as_float(l0_t), as_float(kl_t)
    report = LossReport(
        upscaling=up_f,
        reconstruction_l0=l0_f,
        kl=kl_f,
        total=up_f + l0_f + kl_f,
        per_level=[as_float(v) for v in per_level_t],
    )
    return total, report
