"""Image I/O, resampling, pyramids, and conditional-input preprocessors.

All functions speak the package-wide image convention: float32 arrays of
shape (H, W, 3) with values in [-1, 1]. PNG is the lossless interchange
format used by the tests; JPEG is accepted on load.
"""

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .validation import check_image

DEFAULT_SCALE_FACTOR = 0.75
DEFAULT_MIN_DIM = 25
DEFAULT_MAX_DIM = 250

# Catmull-Rom parameter for the bicubic kernel.
BICUBIC_A = -0.5


def load_image(path):
    """Load an 8-bit raster as a float32 (H, W, 3) array in [-1, 1]."""
    try:
        with PILImage.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32)
    except FileNotFoundError:
        raise FileNotFoundError(f"image file not found: {path}") from None
    except UnidentifiedImageError:
        raise ValueError(f"file is not a decodable image: {path}") from None
    return arr / 255.0 * 2.0 - 1.0


def save_image(img, path):
    """Write an image to disk as an 8-bit raster (format from extension).

    Round-tripping through :func:`load_image` reproduces the pixels within
    1/255 per channel (8-bit quantization).
    """
    img = check_image(img)
    u8 = np.rint((img + 1.0) / 2.0 * 255.0).astype(np.uint8)
    try:
        PILImage.fromarray(u8, mode="RGB").save(path)
    except (OSError, PermissionError) as exc:
        raise OSError(f"cannot write image to {path}: {exc}") from None


def _cubic_kernel(t):
    """Cubic convolution kernel (Keys), a = -0.5, evaluated at |t|."""
    a = BICUBIC_A
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    tn = t[near]
    out[near] = (a + 2.0) * tn**3 - (a + 3.0) * tn**2 + 1.0
    tf = t[far]
    out[far] = a * (tf**3 - 5.0 * tf**2 + 8.0 * tf - 4.0)
    return out


@functools.lru_cache(maxsize=512)
def resample_weights(src_len, dst_len):
    """Dense (dst_len, src_len) bicubic interpolation matrix for one axis.

    Uses pixel-center coordinate mapping and clamps sample coordinates at
    the borders, so each row sums to 1. Resampling to the same length is
    exactly the identity.
    """
    if dst_len < 1 or src_len < 1:
        raise ValueError("resample dimensions must be >= 1")
    centers = (np.arange(dst_len, dtype=np.float64) + 0.5) * (src_len / dst_len) - 0.5
    base = np.floor(centers)
    frac = centers - base
    w = np.zeros((dst_len, src_len), dtype=np.float64)
    for k in range(-1, 3):
        taps = np.clip(base + k, 0, src_len - 1).astype(np.int64)
        weights = _cubic_kernel(frac - k)
        np.add.at(w, (np.arange(dst_len), taps), weights)
    return w


def resample_array(img, target_h, target_w):
    """Separable bicubic resample without range clamping (any channel count)."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    if target_h == h and target_w == w:
        return arr.copy()
    wh = resample_weights(h, target_h)
    ww = resample_weights(w, target_w)
    out = np.einsum("oh,hwc,pw->opc", wh, arr.reshape(h, w, -1), ww)
    return out.reshape(target_h, target_w, *arr.shape[2:])


def resample(img, target_h, target_w):
    """Bicubic resample of an image to exact target dims, clamped to [-1, 1]."""
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be >= 1, got ({target_h}, {target_w})")
    img = check_image(img)
    out = resample_array(img, int(target_h), int(target_w))
    return np.clip(out, -1.0, 1.0).astype(np.float32)


@dataclass
class ImagePyramid:
    """An image at a geometric ladder of resolutions; level 0 is coarsest."""

    levels: list = field(default_factory=list)
    scale_factor: float = DEFAULT_SCALE_FACTOR

    @property
    def num_levels(self):
        return len(self.levels)

    @property
    def dims(self):
        return [(lv.shape[0], lv.shape[1]) for lv in self.levels]


def pyramid_level_dims(height, width, scale_factor, min_dim):
    """Level dims (coarse to fine) for an image of the given size.

    The level count follows ceil(log(min_dim / min(H, W)) / log(r)) + 1 with
    the nominal factor r; the per-level factor is then adjusted so that the
    coarsest level's min-dimension lands on min_dim exactly (up to rounding).
    """
    if not 0.0 < scale_factor < 1.0:
        raise ValueError(f"scale_factor must be in (0, 1), got {scale_factor}")
    min_hw = min(height, width)
    if min_dim > min_hw:
        raise ValueError(
            f"min_dim ({min_dim}) exceeds the image min-dimension ({min_hw})"
        )
    if min_dim == min_hw:
        return [(height, width)], 1.0
    n = math.ceil(math.log(min_dim / min_hw) / math.log(scale_factor))
    r_eff = (min_dim / min_hw) ** (1.0 / n)
    dims = []
    for level in range(n + 1):
        s = r_eff ** (n - level)
        dims.append((max(1, round(height * s)), max(1, round(width * s))))
    for (h0, w0), (h1, w1) in zip(dims, dims[1:]):
        if h1 <= h0 or w1 <= w0:
            raise ValueError(
                "pyramid levels collide: scale_factor too close to 1 for "
                f"a {height}x{width} image (levels {dims})"
            )
    return dims, r_eff


def build_pyramid(img, scale_factor=DEFAULT_SCALE_FACTOR, min_dim=DEFAULT_MIN_DIM,
                  max_dim=DEFAULT_MAX_DIM):
    """Build the multi-scale pyramid of an image.

    The image is first shrunk so its max-dimension is at most ``max_dim``,
    then each level is resampled directly from that base image. The finest
    level equals the (possibly pre-shrunk) input exactly.
    """
    img = check_image(img)
    h, w = img.shape[:2]
    if max_dim is not None and max(h, w) > max_dim:
        s = max_dim / max(h, w)
        img = resample(img, max(1, round(h * s)), max(1, round(w * s)))
        h, w = img.shape[:2]
    dims, r_eff = pyramid_level_dims(h, w, scale_factor, min_dim)
    levels = [resample(img, th, tw) for th, tw in dims[:-1]]
    levels.append(img)
    return ImagePyramid(levels=levels, scale_factor=r_eff)


def pyramid_like(img, dims):
    """Pyramid of ``img`` at a prescribed list of (H, W) level dims.

    ``img`` must match the finest level's dims; used to rebuild per-iteration
    pyramids for augmented copies of the training image.
    """
    img = check_image(img)
    if (img.shape[0], img.shape[1]) != tuple(dims[-1]):
        raise ValueError(
            f"image dims {img.shape[:2]} do not match finest level {dims[-1]}"
        )
    levels = [resample(img, th, tw) for th, tw in dims[:-1]]
    levels.append(img)
    return levels


def fit_palette(img, palette_size, seed=0):
    """K-means palette of ``palette_size`` RGB entries, fixed seed, 10 restarts."""
    from sklearn.cluster import KMeans

    if palette_size < 2:
        raise ValueError(f"palette_size must be >= 2, got {palette_size}")
    img = check_image(img)
    pixels = img.reshape(-1, 3).astype(np.float64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # duplicate clusters on few-color images
        km = KMeans(n_clusters=palette_size, n_init=10, random_state=seed)
        km.fit(pixels)
    return km.cluster_centers_.astype(np.float32)


def apply_palette(img, palette):
    """Map each pixel to its nearest palette entry (Euclidean in RGB)."""
    img = check_image(img)
    palette = np.asarray(palette, dtype=np.float32)
    flat = img.reshape(-1, 3)
    d2 = ((flat[:, None, :] - palette[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    out = palette[labels].reshape(img.shape)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def quantize_colors(img, palette_size, seed=0):
    """Quantize an image to at most ``palette_size`` distinct colors."""
    palette = fit_palette(img, palette_size, seed=seed)
    return apply_palette(img, palette)


def _to_gray(img):
    """Luma in [0, 1] from a [-1, 1] RGB image."""
    rgb01 = (np.asarray(img, dtype=np.float64) + 1.0) / 2.0
    return rgb01 @ np.array([0.299, 0.587, 0.114])


def extract_edges(img, low_thresh=0.1, high_thresh=0.2, sigma=1.0):
    """Edge map via the classic detector chain; output is binary (+1/-1).

    Grayscale -> Gaussian smoothing -> Sobel gradients -> non-maximum
    suppression along the quantized gradient direction -> hysteresis
    thresholding on the max-normalized gradient magnitude.
    """
    from scipy import ndimage

    if not 0.0 <= low_thresh < high_thresh:
        raise ValueError(
            f"thresholds must satisfy 0 <= low < high, got ({low_thresh}, {high_thresh})"
        )
    img = check_image(img)
    gray = _to_gray(img)
    smooth = ndimage.gaussian_filter(gray, sigma=sigma, mode="reflect")
    gx = ndimage.sobel(smooth, axis=1, mode="reflect")
    gy = ndimage.sobel(smooth, axis=0, mode="reflect")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    edges = np.zeros_like(mag, dtype=bool)
    if peak > 0:
        mag = mag / peak
        thin = _non_maximum_suppression(mag, gx, gy)
        seeds = thin & (mag >= high_thresh)
        candidates = thin & (mag >= low_thresh)
        edges = ndimage.binary_propagation(
            seeds, mask=candidates, structure=np.ones((3, 3), dtype=bool)
        )
    out = np.where(edges, 1.0, -1.0).astype(np.float32)
    return np.repeat(out[:, :, None], 3, axis=2)


def _non_maximum_suppression(mag, gx, gy):
    """Keep pixels that are local maxima along the gradient direction.

    Directions are quantized to 4 bins. Ties keep the pixel on the forward
    side only (>= backward, > forward), so a symmetric step yields a
    one-pixel-wide edge.
    """
    h, w = mag.shape
    angle = np.mod(np.arctan2(gy, gx), np.pi)  # orientation, [0, pi)
    sector = np.floor((angle + np.pi / 8) / (np.pi / 4)).astype(int) % 4
    # Forward neighbor offsets (dr, dc) per sector: 0=E, 1=SE, 2=S, 3=SW.
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1, mode="constant")
    keep = np.zeros_like(mag, dtype=bool)
    for s, (dr, dc) in offsets.items():
        fwd = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        bwd = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= (sector == s) & (mag >= bwd) & (mag > fwd)
    return keep & (mag > 0)
