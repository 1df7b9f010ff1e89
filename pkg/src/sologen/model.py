"""Network architectures: the multi-scale upscaling generator and the
variational encoder/decoder pair, plus numpy-facing forward operations.

The generator is a chain of residual blocks, one per pyramid step: block n
bicubically lifts the level-(n-1) image to level-n dims and adds a learned
residual. The encoder maps the coarsest image to a compact spatial code
(three stride-2 stages, 8x reduction); the decoder mirrors it back and ends
in a Tanh, with an exact bicubic resize to the requested dims just before
the Tanh so arbitrary (non power-of-two) coarsest sizes round-trip.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .imaging import resample_weights
from .validation import check_image

GENERATOR_CHANNELS = 32
ENCODER_CHANNELS = (32, 64, 128)
LATENT_CHANNELS = 128
LATENT_REDUCTION = 8  # three stride-2 stages
DEFAULT_NOISE_SIGMA = 0.01

_weight_cache = {}


def _axis_weights(src, dst, device, dtype):
    key = (src, dst, device, dtype)
    w = _weight_cache.get(key)
    if w is None:
        w = torch.as_tensor(resample_weights(src, dst), device=device, dtype=dtype)
        _weight_cache[key] = w
    return w


def bicubic_upsample(x, target_h, target_w):
    """Differentiable separable bicubic resize of an NCHW tensor (no clamp)."""
    h, w = x.shape[-2:]
    if (h, w) == (target_h, target_w):
        return x
    wh = _axis_weights(h, target_h, x.device, x.dtype)
    ww = _axis_weights(w, target_w, x.device, x.dtype)
    return torch.einsum("oh,nchw,pw->ncop", wh, x, ww)


def to_tensor(img, device="cpu", dtype=torch.float32):
    """(H, W, 3) numpy image -> (1, 3, H, W) tensor."""
    arr = np.ascontiguousarray(np.moveaxis(np.asarray(img), 2, 0))
    return torch.as_tensor(arr, dtype=dtype, device=device).unsqueeze(0)


def to_image(t, clip=True):
    """(1, 3, H, W) tensor -> (H, W, 3) float32 numpy image."""
    arr = np.moveaxis(t.detach().cpu().numpy()[0], 0, 2).astype(np.float32)
    if clip:
        arr = np.clip(arr, -1.0, 1.0)
    return np.ascontiguousarray(arr)


def _conv(in_ch, out_ch):
    return nn.Conv2d(in_ch, out_ch, 3, padding=1, padding_mode="reflect")


class GeneratorBlock(nn.Module):
    """Residual branch of one upscaling step: 5 convs, BN+ReLU between.

    The block sees the already-upsampled image and returns the residual to
    add to it; a Tanh caps the residual magnitude.
    """

    def __init__(self, channels=GENERATOR_CHANNELS, in_channels=3, out_channels=3):
        super().__init__()
        layers = [_conv(in_channels, channels), nn.BatchNorm2d(channels), nn.ReLU()]
        for _ in range(3):
            layers += [_conv(channels, channels), nn.BatchNorm2d(channels), nn.ReLU()]
        layers += [_conv(channels, out_channels), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    def forward(self, upsampled):
        return self.net(upsampled)


class UpscalingGenerator(nn.Module):
    """End-to-end multi-scale generator: one block per pyramid step.

    level_dims lists the (H, W) of every pyramid level, coarsest first;
    block n maps level-(n-1) resolution to level-n resolution.
    """

    def __init__(self, level_dims, channels=GENERATOR_CHANNELS):
        super().__init__()
        self.level_dims = [tuple(int(v) for v in d) for d in level_dims]
        self.channels = channels
        self.blocks = nn.ModuleList(
            GeneratorBlock(channels) for _ in range(len(self.level_dims) - 1)
        )

    def target_dims(self, in_h, in_w, start_level=0):
        """Per-level output dims for an input at the given size.

        Anchored proportionally at the start level, so an input matching
        the pyramid exactly reproduces the pyramid dims exactly, and wider
        inputs (novel synthesis) scale by the same ratios.
        """
        h0, w0 = self.level_dims[start_level]
        dims = []
        for h, w in self.level_dims[start_level + 1:]:
            dims.append((max(1, round(in_h * h / h0)), max(1, round(in_w * w / w0))))
        return dims

    def forward(self, x, start_level=0):
        """Run blocks start_level+1 ... N; returns one tensor per level."""
        n_levels = len(self.level_dims)
        if not 0 <= start_level < n_levels:
            raise ValueError(
                f"start_level must be in [0, {n_levels - 1}], got {start_level}"
            )
        outputs = []
        cur = x
        dims = self.target_dims(x.shape[-2], x.shape[-1], start_level)
        for block, (th, tw) in zip(self.blocks[start_level:], dims):
            up = bicubic_upsample(cur, th, tw)
            cur = up + block(up)
            outputs.append(cur)
        return outputs


class Encoder(nn.Module):
    """Coarsest image -> latent code: three stride-2 conv stages.

    Fully convolutional, so wider inputs yield proportionally wider codes;
    each stage halves (floor) the spatial dims, an 8x total reduction.
    """

    def __init__(self, channels=ENCODER_CHANNELS):
        super().__init__()
        stages = []
        in_ch = 3
        for out_ch in channels:
            stages += [
                nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1),
                nn.BatchNorm2d(out_ch),
                nn.LeakyReLU(0.2),
            ]
            in_ch = out_ch
        self.net = nn.Sequential(*stages)

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    """Latent code -> coarsest image: mirrored transposed-conv stages.

    The stack upsamples 8x; a bicubic resize to the exact requested dims
    precedes the final Tanh, so the output range is strictly inside
    (-1, 1) at any target size.
    """

    def __init__(self, channels=ENCODER_CHANNELS):
        super().__init__()
        rev = list(reversed(channels))
        stages = []
        for in_ch, out_ch in zip(rev[:-1], rev[1:]):
            stages += [
                nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(),
            ]
        stages.append(nn.ConvTranspose2d(rev[-1], 3, 4, stride=2, padding=1))
        self.net = nn.Sequential(*stages)

    def forward(self, z, target_dims):
        out = self.net(z)
        out = bicubic_upsample(out, int(target_dims[0]), int(target_dims[1]))
        # Clamp the pre-activation so Tanh stays strictly below 1 in float32.
        return torch.tanh(out.clamp(-8.0, 8.0))


def init_weights(module):
    """Zero-mean Gaussian init (sigma 0.02) for conv weights; BN near 1.

    Conv biases keep their default (uniform fan-in) init: starting them at
    exactly zero parks dead-patch activations exactly on the ReLU kink,
    which stalls those units and makes gradients ill-defined there.
    """
    name = module.__class__.__name__
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
    elif "BatchNorm" in name and getattr(module, "weight", None) is not None:
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


@dataclass
class LatentCode:
    """Spatial latent grid as a (1, C, h_z, w_z) tensor."""

    values: torch.Tensor

    @property
    def spatial_dims(self):
        return tuple(self.values.shape[-2:])

    def numpy(self):
        return self.values.detach().cpu().numpy()[0]


def latent_dims_for(coarsest_dims):
    """Latent spatial dims for a coarsest level: floor-div by the reduction."""
    h, w = coarsest_dims
    hz, wz = h // LATENT_REDUCTION, w // LATENT_REDUCTION
    if hz < 1 or wz < 1:
        raise ValueError(
            f"coarsest level {coarsest_dims} too small for the "
            f"{LATENT_REDUCTION}x encoder reduction; need both dims >= "
            f"{LATENT_REDUCTION}"
        )
    return hz, wz


@dataclass
class PyramidSpec:
    """Static description of the training pyramid (dims coarse to fine)."""

    level_dims: list
    scale_factor: float

    def __post_init__(self):
        self.level_dims = [tuple(int(v) for v in d) for d in self.level_dims]

    @property
    def num_levels(self):
        return len(self.level_dims)

    @property
    def coarsest_dims(self):
        return self.level_dims[0]

    @property
    def finest_dims(self):
        return self.level_dims[-1]

    def to_dict(self):
        return {
            "level_dims": [list(d) for d in self.level_dims],
            "scale_factor": float(self.scale_factor),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(level_dims=d["level_dims"], scale_factor=d["scale_factor"])


@dataclass
class ModelBundle:
    """Everything a trained model carries: networks, pyramid, config, data.

    Unconditional bundles have both encoder and decoder; conditional ones
    have neither. The training image rides along so downstream tasks
    (animation seeds, self-consistency checks) need no external files.
    """

    generator: UpscalingGenerator
    encoder: Encoder = None
    decoder: Decoder = None
    pyramid_spec: PyramidSpec = None
    train_config: dict = field(default_factory=dict)
    train_image: np.ndarray = None
    palette: np.ndarray = None

    def __post_init__(self):
        if (self.encoder is None) != (self.decoder is None):
            raise ValueError(
                "encoder and decoder must both be present (unconditional "
                "mode) or both absent (conditional mode)"
            )

    @property
    def is_conditional(self):
        return self.encoder is None

    @property
    def coarsest_dims(self):
        return self.pyramid_spec.coarsest_dims

    def modules(self):
        mods = [self.generator]
        if self.encoder is not None:
            mods += [self.encoder, self.decoder]
        return mods

    def parameters(self):
        for m in self.modules():
            yield from m.parameters()

    def train_mode(self):
        for m in self.modules():
            m.train()
        return self

    def eval_mode(self):
        for m in self.modules():
            m.eval()
        return self


def _check_dims(img, dims, what):
    if (img.shape[0], img.shape[1]) != tuple(dims):
        raise ValueError(
            f"{what} dims {img.shape[:2]} do not match expected {tuple(dims)}"
        )


def generator_forward(generator, x0):
    """Run the full chain on a coarsest-level image; returns levels 1..N.

    Numpy-facing: input and outputs are (H, W, 3) images; outputs are
    clipped to the image range.
    """
    x0 = check_image(x0, name="x0")
    _check_dims(x0, generator.level_dims[0], "x0")
    with torch.no_grad():
        outs = generator(to_tensor(x0, device=_device_of(generator)))
    return [to_image(t) for t in outs]


def inject_at_scale(generator, img, level):
    """Run only blocks level+1 .. N starting from an externally given image."""
    img = check_image(img, name="img")
    n_levels = len(generator.level_dims)
    if not 0 <= level < n_levels:
        raise ValueError(f"level must be in [0, {n_levels - 1}], got {level}")
    _check_dims(img, generator.level_dims[level], "injected image")
    with torch.no_grad():
        outs = generator(to_tensor(img, device=_device_of(generator)), start_level=level)
    return [to_image(t) for t in outs]


def encode(encoder, x0):
    """Deterministic encoding of a coarsest-level image to a LatentCode."""
    x0 = check_image(x0, name="x0")
    with torch.no_grad():
        z = encoder(to_tensor(x0, device=_device_of(encoder)))
    return LatentCode(values=z)


def decode(decoder, code, noise_sigma=DEFAULT_NOISE_SIGMA, rng=None, target_dims=None):
    """Decode a latent code (plus Gaussian noise) back to an image.

    noise_sigma scales per-element Gaussian noise added to the code before
    decoding; 0 makes the call deterministic. target_dims defaults to the
    8x-lifted latent dims when not given.
    """
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    z = code.values
    if noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng()
        eps = rng.standard_normal(size=tuple(z.shape)) * noise_sigma
        z = z + torch.as_tensor(eps, dtype=z.dtype, device=z.device)
    if target_dims is None:
        target_dims = (z.shape[-2] * LATENT_REDUCTION, z.shape[-1] * LATENT_REDUCTION)
    with torch.no_grad():
        out = decoder(z, target_dims)
    return to_image(out)


def _device_of(module):
    try:
        return next(module.parameters()).device
    except StopIteration:
        return torch.device("cpu")
