"""Estimator facade: fit a generator to one image, then call its tasks.

Follows the scikit-learn estimator conventions (constructor stores
hyper-parameters verbatim, fit returns self, fitted state carries a
trailing underscore, get_params/set_params work for cloning and grid
tooling) so the model slots into that ecosystem's harnesses, mirroring how
other torch training loops are wrapped for it.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import tasks
from .imaging import load_image
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from .validation import check_image
from .warp import AugmentationSpec


class SingleImageGenerator(BaseEstimator):
    """A single-image generative model with a fit/generate lifecycle.

    Parameters mirror TrainConfig; see that class for semantics. fit()
    accepts either an (H, W, 3) array in [-1, 1] or an image file path.

    Examples:
        >>> gen = SingleImageGenerator(iterations=2000, loss_mode="pixel")
        >>> gen.fit("photo.png")                          # doctest: +SKIP
        >>> frames = gen.animate(frame_count=8)           # doctest: +SKIP
    """

    def __init__(
        self,
        mode="unconditional",
        condition_source="none",
        iterations=20000,
        lr=5e-4,
        alpha=1e-3,
        noise_sigma=0.01,
        scale_factor=0.75,
        min_dim=25,
        max_dim=250,
        loss_mode="vgg",
        palette_size=5,
        edge_low=0.1,
        edge_high=0.2,
        channels=32,
        augmentation=None,
        seed=0,
        device="cpu",
    ):
        self.mode = mode
        self.condition_source = condition_source
        self.iterations = iterations
        self.lr = lr
        self.alpha = alpha
        self.noise_sigma = noise_sigma
        self.scale_factor = scale_factor
        self.min_dim = min_dim
        self.max_dim = max_dim
        self.loss_mode = loss_mode
        self.palette_size = palette_size
        self.edge_low = edge_low
        self.edge_high = edge_high
        self.channels = channels
        self.augmentation = augmentation
        self.seed = seed
        self.device = device

    def _build_config(self, image_path=None):
        return TrainConfig(
            image_path=image_path,
            mode=self.mode,
            condition_source=self.condition_source,
            iterations=self.iterations,
            lr=self.lr,
            alpha=self.alpha,
            noise_sigma=self.noise_sigma,
            scale_factor=self.scale_factor,
            min_dim=self.min_dim,
            max_dim=self.max_dim,
            augmentation=self.augmentation
            if self.augmentation is not None
            else AugmentationSpec(seed=self.seed),
            seed=self.seed,
            loss_mode=self.loss_mode,
            palette_size=self.palette_size,
            edge_low=self.edge_low,
            edge_high=self.edge_high,
            channels=self.channels,
            device=self.device,
        )

    def fit(self, X, y=None, out_dir=None):
        """Train on one image (array or file path); returns self."""
        if isinstance(X, (str, bytes)):
            config = self._build_config(image_path=str(X))
            image = load_image(X)
        else:
            config = self._build_config()
            image = check_image(np.asarray(X))
        self.bundle_, self.log_ = train(config, image=image, out_dir=out_dir)
        return self

    @property
    def train_image_(self):
        check_is_fitted(self, "bundle_")
        return self.bundle_.train_image

    def interpolate(self, x1, x2, alpha):
        check_is_fitted(self, "bundle_")
        return tasks.interpolate(self.bundle_, x1, x2, alpha)

    def animate(self, frame_count=8, seeds=(1, 2), loop_mode="once", output_dir=None):
        check_is_fitted(self, "bundle_")
        spec = tasks.AnimationSpec(
            frame_count=frame_count,
            seeds=seeds,
            loop_mode=loop_mode,
            output_dir=output_dir,
        )
        return tasks.animate(self.bundle_, spec)

    def synthesize(self, count=1, seeds=(1, 2), alpha=0.5):
        check_is_fitted(self, "bundle_")
        return tasks.synthesize_novel(self.bundle_, count, seeds=seeds, alpha=alpha)

    def paint2image(self, paint, with_sifid=False):
        check_is_fitted(self, "bundle_")
        return tasks.paint2image(self.bundle_, paint, with_sifid=with_sifid)

    def edges2image(self, edges):
        check_is_fitted(self, "bundle_")
        return tasks.edges2image(self.bundle_, edges)

    def harmonize(self, composite, mask, injection_level=None):
        check_is_fitted(self, "bundle_")
        job = tasks.HarmonizationJob(
            composite=composite, mask=mask, injection_level=injection_level
        )
        return tasks.harmonize(self.bundle_, job)

    def super_resolve(self, img, steps=1):
        check_is_fitted(self, "bundle_")
        return tasks.super_resolve(self.bundle_, img, steps=steps)

    def save(self, path):
        """Persist the fitted model as a checkpoint directory."""
        check_is_fitted(self, "bundle_")
        return save_checkpoint(self.bundle_, path)

    @classmethod
    def from_checkpoint(cls, path, device="cpu"):
        """Rebuild a fitted estimator from a saved checkpoint."""
        bundle = load_checkpoint(path, device=device)
        cfg = TrainConfig.from_dict(bundle.train_config)
        est = cls(
            mode=cfg.mode,
            condition_source=cfg.condition_source,
            iterations=cfg.iterations,
            lr=cfg.lr,
            alpha=cfg.alpha,
            noise_sigma=cfg.noise_sigma,
            scale_factor=cfg.scale_factor,
            min_dim=cfg.min_dim,
            max_dim=cfg.max_dim,
            loss_mode=cfg.loss_mode,
            palette_size=cfg.palette_size,
            edge_low=cfg.edge_low,
            edge_high=cfg.edge_high,
            channels=cfg.channels,
            augmentation=cfg.augmentation,
            seed=cfg.seed,
            device=cfg.device,
        )
        est.bundle_ = bundle
        est.log_ = None
        return est
