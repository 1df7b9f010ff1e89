"""Single-image Frechet distance between deep-feature statistics.

Each spatial position of an early feature map is treated as one sample;
the score is the Frechet distance between the Gaussian fits of the two
images' position statistics.

The reference extractor is the pre-pooling early feature map of a standard
pretrained inception-style classifier, whose weights are looked up in the
directory named by SOLOGEN_WEIGHTS_DIR. A deterministic raw-patch
extractor (flattened 7x7 windows) keeps the math fully testable without
any pretrained weights.
"""

import functools
import glob
import os
from dataclasses import dataclass

import numpy as np
import torch

from .objective import WEIGHTS_DIR_ENV
from .model import to_tensor
from .validation import check_image

PATCH_SIZE = 7
PATCH_EXTRACTOR_ID = "patch-7x7-rgb"
INCEPTION_EXTRACTOR_ID = "inception-v3-prepool"


@dataclass
class FeatureStats:
    """Empirical mean and covariance of features over spatial positions."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self):
        return self.mean.shape[0]


def patch_features(img):
    """Fallback extractor: every 7x7x3 window flattened to a 147-vector."""
    img = check_image(img)
    h, w = img.shape[:2]
    if h < PATCH_SIZE or w < PATCH_SIZE:
        raise ValueError(
            f"image {h}x{w} is smaller than the {PATCH_SIZE}px patch extractor"
        )
    windows = np.lib.stride_tricks.sliding_window_view(
        img, (PATCH_SIZE, PATCH_SIZE), axis=(0, 1)
    )
    n = (h - PATCH_SIZE + 1) * (w - PATCH_SIZE + 1)
    return windows.reshape(n, -1).astype(np.float64)


@functools.lru_cache(maxsize=1)
def _inception_net():
    weights_dir = os.environ.get(WEIGHTS_DIR_ENV, "")
    candidates = (
        sorted(glob.glob(os.path.join(weights_dir, "inception_v3*.pth")))
        if weights_dir
        else []
    )
    if not candidates:
        raise RuntimeError(
            "the inception extractor needs pretrained weights. Download "
            "torchvision's inception_v3 checkpoint (inception_v3*.pth) into "
            f"a directory and point {WEIGHTS_DIR_ENV} at it, or use the "
            "documented raw-patch fallback (extractor='patch')."
        )
    from torchvision.models import inception_v3

    net = inception_v3(weights=None, aux_logits=True, init_weights=False)
    state = torch.load(candidates[0], map_location="cpu", weights_only=True)
    net.load_state_dict(state)
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def inception_features(img):
    """Pre-pooling early feature map of the pretrained classifier."""
    img = check_image(img)
    net = _inception_net()
    with torch.no_grad():
        x = to_tensor(img)
        x = net.Conv2d_1a_3x3(x)
        x = net.Conv2d_2a_3x3(x)
        x = net.Conv2d_2b_3x3(x)
    feat = x[0].permute(1, 2, 0).reshape(-1, x.shape[1])
    return feat.numpy().astype(np.float64)


def inception_available():
    try:
        _inception_net()
        return True
    except RuntimeError:
        return False


_EXTRACTORS = {
    "patch": (patch_features, PATCH_EXTRACTOR_ID),
    "inception": (inception_features, INCEPTION_EXTRACTOR_ID),
}


def _resolve_extractor(extractor):
    if callable(extractor):
        return extractor, getattr(extractor, "__name__", "custom")
    if extractor == "auto":
        extractor = "inception" if inception_available() else "patch"
    if extractor not in _EXTRACTORS:
        raise ValueError(
            f"unknown extractor {extractor!r}; expected 'patch', 'inception', "
            "'auto', or a callable"
        )
    return _EXTRACTORS[extractor]


def feature_stats(img, extractor="inception"):
    """Mean/covariance of extractor features over spatial positions."""
    fn, _ = _resolve_extractor(extractor)
    feats = fn(img)
    mean = feats.mean(axis=0)
    if feats.shape[0] >= 2:
        cov = np.cov(feats, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
    else:
        cov = np.zeros((feats.shape[1], feats.shape[1]))
    cov = (cov + cov.T) / 2.0
    return FeatureStats(mean=mean, cov=cov)


def _psd_sqrt(c):
    vals, vecs = np.linalg.eigh((c + c.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(s1, s2):
    """||mu1-mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2)).

    The matrix square root is taken via symmetric eigendecomposition of
    C1^(1/2) C2 C1^(1/2), clipping negative eigenvalues at zero.
    """
    if s1.mean.shape != s2.mean.shape or s1.cov.shape != s2.cov.shape:
        raise ValueError(
            f"feature statistics disagree in dimension: {s1.mean.shape} vs "
            f"{s2.mean.shape}"
        )
    diff = s1.mean - s2.mean
    c1h = _psd_sqrt(s1.cov)
    inner = c1h @ s2.cov @ c1h
    eigvals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sum(np.sqrt(np.clip(eigvals, 0.0, None)))
    d = diff @ diff + np.trace(s1.cov) + np.trace(s2.cov) - 2.0 * tr_sqrt
    return max(float(d), 0.0)


def sifid(a, b, extractor="inception"):
    """Single-image Frechet distance between two images."""
    value, _ = sifid_with_id(a, b, extractor=extractor)
    return value


def sifid_with_id(a, b, extractor="auto"):
    """sifid plus the identifier of the extractor actually used."""
    fn, extractor_id = _resolve_extractor(extractor)
    return frechet_distance(feature_stats(a, fn), feature_stats(b, fn)), extractor_id
