"""Shared fixtures: the committed smoke image and small pre-trained bundles."""

from pathlib import Path

import numpy as np
import pytest

from sologen import imaging
from sologen.trainer import TrainConfig, train
from sologen.warp import AugmentationSpec

DATA_DIR = Path(__file__).parent / "data"
SMOKE_PNG = DATA_DIR / "smoke.png"


def make_smooth_image(seed, height, width, amplitude=0.9, cells=6):
    """A smooth random test image with no saturated pixels.

    Low-resolution noise is upsampled so the result has gentle gradients
    everywhere; scaling by amplitude/max keeps every value strictly inside
    [-1, 1], which keeps resampling overshoot and activation kinks out of
    tolerance comparisons.
    """
    rng = np.random.default_rng(seed)
    low = rng.uniform(-1.0, 1.0, (cells, cells, 3))
    img = imaging.resample_array(low, height, width)
    return (amplitude * img / np.abs(img).max()).astype(np.float32)


@pytest.fixture(scope="session")
def smoke_path():
    assert SMOKE_PNG.exists(), f"missing committed test image {SMOKE_PNG}"
    return str(SMOKE_PNG)


@pytest.fixture(scope="session")
def smoke_image(smoke_path):
    return imaging.load_image(smoke_path)


@pytest.fixture(scope="session")
def smooth_image():
    return make_smooth_image


def tiny_config(image_path, **overrides):
    """A fast, fully deterministic training setup on a 32px pyramid."""
    base = dict(
        image_path=image_path,
        iterations=40,
        loss_mode="pixel",
        min_dim=18,
        max_dim=32,
        seed=0,
        augmentation=AugmentationSpec(seed=0),
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_image_path(tmp_path_factory, smoke_image):
    small = imaging.resample(smoke_image, 32, 32)
    path = tmp_path_factory.mktemp("tiny") / "tiny.png"
    imaging.save_image(small, path)
    return str(path)


@pytest.fixture(scope="session")
def tiny_bundle(tiny_image_path):
    bundle, log = train(tiny_config(tiny_image_path))
    return bundle


@pytest.fixture(scope="session")
def tiny_conditional_bundle(tiny_image_path):
    config = tiny_config(
        tiny_image_path, mode="conditional", condition_source="edge-map"
    )
    bundle, log = train(config)
    return bundle


@pytest.fixture(scope="session")
def tiny_paint_bundle(tiny_image_path):
    config = tiny_config(
        tiny_image_path,
        mode="conditional",
        condition_source="paint-quantized",
        palette_size=4,
    )
    bundle, log = train(config)
    return bundle
