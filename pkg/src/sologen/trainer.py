"""End-to-end training: configuration, the optimization loop, and
checkpoint persistence.

Every iteration draws a fresh augmentation of the training image, rebuilds
its pyramid, evaluates the combined objective, and applies one Adam step to
all trainable parameters jointly. All randomness for iteration i comes from
a generator seeded with (seed, i), so an interrupted run resumed from a
checkpoint retraces the uninterrupted run exactly.
"""

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import __version__
from .imaging import (
    DEFAULT_MAX_DIM,
    DEFAULT_MIN_DIM,
    DEFAULT_SCALE_FACTOR,
    build_pyramid,
    extract_edges,
    fit_palette,
    apply_palette,
    load_image,
)
from .model import (
    Decoder,
    Encoder,
    ModelBundle,
    PyramidSpec,
    UpscalingGenerator,
    init_weights,
    latent_dims_for,
)
from .objective import DEFAULT_KL_ALPHA, LOSS_MODES, total_loss
from .validation import check_image
from .warp import AugmentationSpec, augment_sample

CHECKPOINT_FORMAT_VERSION = 1
GRAD_CLIP_NORM = 10.0

MODES = ("unconditional", "conditional")
CONDITION_SOURCES = ("none", "paint-quantized", "edge-map")


@dataclass
class TrainConfig:
    """Everything a training run depends on, JSON-serializable.

    mode "unconditional" trains the variational front-end together with the
    generator; "conditional" trains the generator alone on a preprocessed
    condition (quantized colors or an edge map) fed at the coarsest scale.
    """

    image_path: str = None
    mode: str = "unconditional"
    condition_source: str = "none"
    iterations: int = 20000
    lr: float = 5e-4
    betas: tuple = (0.5, 0.999)
    alpha: float = DEFAULT_KL_ALPHA
    noise_sigma: float = 0.01
    scale_factor: float = DEFAULT_SCALE_FACTOR
    min_dim: int = DEFAULT_MIN_DIM
    max_dim: int = DEFAULT_MAX_DIM
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    seed: int = 0
    checkpoint_every: int = 0
    loss_mode: str = "vgg"
    palette_size: int = 5
    edge_low: float = 0.1
    edge_high: float = 0.2
    channels: int = 32
    device: str = "cpu"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.condition_source not in CONDITION_SOURCES:
            raise ValueError(
                f"condition_source must be one of {CONDITION_SOURCES}, "
                f"got {self.condition_source!r}"
            )
        if (self.mode == "conditional") != (self.condition_source != "none"):
            raise ValueError(
                "conditional mode requires a condition_source and "
                "unconditional mode requires condition_source='none'"
            )
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.alpha < 0 or self.noise_sigma < 0:
            raise ValueError("alpha and noise_sigma must be >= 0")
        if not 0.0 < self.scale_factor < 1.0:
            raise ValueError(f"scale_factor must be in (0, 1), got {self.scale_factor}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(
                f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}"
            )
        if self.palette_size < 2:
            raise ValueError(f"palette_size must be >= 2, got {self.palette_size}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0 (0 disables)")
        self.betas = tuple(self.betas)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        d["augmentation"] = dataclasses.asdict(self.augmentation)
        d["augmentation"]["crop_fraction_range"] = list(
            self.augmentation.crop_fraction_range
        )
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        aug = d.pop("augmentation", None)
        if aug is not None:
            aug = dict(aug)
            if "crop_fraction_range" in aug:
                aug["crop_fraction_range"] = tuple(aug["crop_fraction_range"])
            d["augmentation"] = AugmentationSpec(**aug)
        if "betas" in d and d["betas"] is not None:
            d["betas"] = tuple(d["betas"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


def cosine_lr(base_lr, iteration, total_iterations):
    """Cosine-annealed learning rate: base * 0.5 * (1 + cos(pi*i/total))."""
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * iteration / total_iterations))


def create_bundle(config, pyramid_spec, palette=None, train_image=None):
    """Build a freshly initialized ModelBundle for a config and pyramid.

    Network initialization is seeded from config.seed, so the same config
    always starts from identical weights.
    """
    torch.manual_seed(config.seed)
    device = torch.device(config.device)
    generator = UpscalingGenerator(pyramid_spec.level_dims, channels=config.channels)
    generator.apply(init_weights)
    encoder = decoder = None
    if config.mode == "unconditional":
        latent_dims_for(pyramid_spec.coarsest_dims)  # raises if too small
        encoder = Encoder()
        encoder.apply(init_weights)
        decoder = Decoder()
        decoder.apply(init_weights)
    bundle = ModelBundle(
        generator=generator.to(device),
        encoder=None if encoder is None else encoder.to(device),
        decoder=None if decoder is None else decoder.to(device),
        pyramid_spec=pyramid_spec,
        train_config=config.to_dict(),
        train_image=train_image,
        palette=palette,
    )
    return bundle


def _prepare_condition_full(config, train_image):
    """Full-resolution conditioning map (and palette) for conditional mode."""
    if config.condition_source == "paint-quantized":
        palette = fit_palette(train_image, config.palette_size, seed=config.seed)
        return apply_palette(train_image, palette), palette
    if config.condition_source == "edge-map":
        return extract_edges(train_image, config.edge_low, config.edge_high), None
    return None, None


def train(config, image=None, out_dir=None, resume_from=None, progress=None):
    """Run the full training loop; returns (bundle, log).

    Args:
        config: a validated TrainConfig.
        image: optional (H, W, 3) array; when absent, config.image_path is
            loaded from disk.
        out_dir: optional directory for the JSON-lines log, periodic
            checkpoints, and the final checkpoint.
        resume_from: optional checkpoint directory to continue from.
        progress: optional callable(iteration, report) invoked per step.

    The log holds one dict per iteration (loss report plus iteration and
    learning rate). Identical config and seed reproduce it bit-identically.
    """
    if image is None:
        if config.image_path is None:
            raise ValueError("config.image_path is not set and no image was given")
        image = load_image(config.image_path)
    image = check_image(image)

    pyramid = build_pyramid(image, config.scale_factor, config.min_dim, config.max_dim)
    spec = PyramidSpec(level_dims=pyramid.dims, scale_factor=pyramid.scale_factor)
    train_image = pyramid.levels[-1]

    condition_full, palette = _prepare_condition_full(config, train_image)
    bundle = create_bundle(config, spec, palette=palette, train_image=train_image)
    params = list(bundle.parameters())
    optimizer = torch.optim.Adam(params, lr=config.lr, betas=config.betas)

    start_iteration = 0
    if resume_from is not None:
        payload, manifest = _read_checkpoint(resume_from, config.device)
        _load_bundle_weights(bundle, payload)
        if payload.get("optimizer") is None:
            raise ValueError(
                f"checkpoint {resume_from} has no optimizer state; cannot resume"
            )
        optimizer.load_state_dict(payload["optimizer"])
        start_iteration = int(payload["iteration"])

    log = []
    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        mode = "a" if (resume_from is not None and start_iteration > 0) else "w"
        log_file = open(os.path.join(out_dir, "log.jsonl"), mode)

    bundle.train_mode()
    try:
        for i in range(start_iteration, config.iterations):
            lr = cosine_lr(config.lr, i, config.iterations)
            for group in optimizer.param_groups:
                group["lr"] = lr
            rng = np.random.default_rng([config.seed, i])
            sample = augment_sample(
                train_image, condition_full, config.augmentation, rng
            )
            loss, report = total_loss(
                bundle,
                sample,
                alpha=config.alpha,
                noise_sigma=config.noise_sigma,
                rng=rng,
            )
            if not math.isfinite(report.total):
                if out_dir is not None:
                    save_checkpoint(
                        bundle,
                        os.path.join(out_dir, "diagnostic"),
                        optimizer=optimizer,
                        iteration=i,
                    )
                raise RuntimeError(
                    f"non-finite loss at iteration {i}: {report.to_dict()}"
                )
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, GRAD_CLIP_NORM)
            optimizer.step()

            entry = {"iteration": i, "lr": lr, **report.to_dict()}
            log.append(entry)
            if log_file is not None:
                log_file.write(json.dumps(entry) + "\n")
            if progress is not None:
                progress(i, report)
            if (
                out_dir is not None
                and config.checkpoint_every > 0
                and (i + 1) % config.checkpoint_every == 0
            ):
                save_checkpoint(
                    bundle,
                    os.path.join(out_dir, "checkpoints", f"{i + 1:06d}"),
                    optimizer=optimizer,
                    iteration=i + 1,
                )
    finally:
        if log_file is not None:
            log_file.close()

    bundle.eval_mode()
    if out_dir is not None:
        save_checkpoint(
            bundle,
            os.path.join(out_dir, "final"),
            optimizer=optimizer,
            iteration=config.iterations,
        )
    return bundle, log


def train_conditional(config, image=None, out_dir=None, resume_from=None, progress=None):
    """Train a generator-only bundle on a preprocessed condition."""
    if config.mode != "conditional":
        raise ValueError("train_conditional requires config.mode='conditional'")
    return train(
        config, image=image, out_dir=out_dir, resume_from=resume_from, progress=progress
    )


def _state_to_cpu(state_dict):
    return {
        k: v.detach().cpu() if isinstance(v, torch.Tensor) else v
        for k, v in state_dict.items()
    }


def save_checkpoint(bundle, path, optimizer=None, iteration=None):
    """Write a bundle (and optional training state) to a directory.

    The directory holds weights.pt plus manifest.json; the manifest stores
    the pyramid spec, mode, config snapshot, and a SHA-256 of the weights
    file, and suffices to rebuild the bundle without the original config.
    """
    os.makedirs(path, exist_ok=True)
    payload = {
        "generator": _state_to_cpu(bundle.generator.state_dict()),
        "encoder": None
        if bundle.encoder is None
        else _state_to_cpu(bundle.encoder.state_dict()),
        "decoder": None
        if bundle.decoder is None
        else _state_to_cpu(bundle.decoder.state_dict()),
        "train_image": None
        if bundle.train_image is None
        else torch.as_tensor(bundle.train_image),
        "palette": None if bundle.palette is None else torch.as_tensor(bundle.palette),
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "iteration": 0 if iteration is None else int(iteration),
    }
    weights_path = os.path.join(path, "weights.pt")
    torch.save(payload, weights_path)
    with open(weights_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "tool_version": __version__,
        "weights_file": "weights.pt",
        "weights_sha256": digest,
        "pyramid": bundle.pyramid_spec.to_dict(),
        "channels": bundle.generator.channels,
        "mode": "conditional" if bundle.is_conditional else "unconditional",
        "condition_source": bundle.train_config.get("condition_source", "none"),
        "train_config": bundle.train_config,
        "iteration": payload["iteration"],
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _read_checkpoint(path, device="cpu"):
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"checkpoint format version {version!r} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    weights_path = os.path.join(path, manifest["weights_file"])
    with open(weights_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    if digest != manifest["weights_sha256"]:
        raise ValueError(
            f"checkpoint weights hash mismatch at {weights_path}: the file "
            "does not match its manifest (corrupt or tampered checkpoint)"
        )
    payload = torch.load(weights_path, map_location=device, weights_only=True)
    return payload, manifest


def _load_bundle_weights(bundle, payload):
    bundle.generator.load_state_dict(payload["generator"])
    if bundle.encoder is not None:
        if payload["encoder"] is None or payload["decoder"] is None:
            raise ValueError("checkpoint has no encoder/decoder weights")
        bundle.encoder.load_state_dict(payload["encoder"])
        bundle.decoder.load_state_dict(payload["decoder"])


def load_checkpoint(path, device="cpu"):
    """Rebuild a ModelBundle from a checkpoint directory."""
    payload, manifest = _read_checkpoint(path, device)
    config = TrainConfig.from_dict(manifest["train_config"])
    config.device = device
    spec = PyramidSpec.from_dict(manifest["pyramid"])
    train_image = payload.get("train_image")
    palette = payload.get("palette")
    bundle = create_bundle(
        config,
        spec,
        palette=None if palette is None else palette.numpy(),
        train_image=None if train_image is None else train_image.numpy(),
    )
    _load_bundle_weights(bundle, payload)
    bundle.eval_mode()
    return bundle
