"""Input validation helpers shared across the package.

Images are plain numpy arrays of shape (H, W, 3), float32, with values in
[-1, 1]. Every public entry point funnels its array inputs through
:func:`check_image` so the rest of the code can assume the convention.
"""

import numpy as np

IMAGE_RANGE_TOL = 1e-4


def check_image(img, name="image"):
    """Validate and canonicalize an image array.

    Accepts anything convertible to a (H, W, 3) float array with finite
    values in [-1, 1] (up to a small tolerance, to absorb float32 round-off)
    and returns it as contiguous float32.
    """
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None].repeat(3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(
            f"{name} must have shape (H, W, 3), got {arr.shape}"
        )
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have H >= 1 and W >= 1, got {arr.shape}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < -1.0 - IMAGE_RANGE_TOL or hi > 1.0 + IMAGE_RANGE_TOL:
        raise ValueError(
            f"{name} values must lie in [-1, 1], got range [{lo:.4g}, {hi:.4g}]"
        )
    return np.ascontiguousarray(np.clip(arr, -1.0, 1.0))


def check_binary_image(img, name="image"):
    """Validate a binary (+1/-1) image; returns float32 array."""
    arr = check_image(img, name=name)
    if not np.all((arr == 1.0) | (arr == -1.0)):
        raise ValueError(f"{name} must contain only the values -1 and +1")
    return arr


def check_same_shape(a, b, name_a="first image", name_b="second image"):
    if a.shape != b.shape:
        raise ValueError(
            f"{name_a} and {name_b} must have identical shapes, "
            f"got {a.shape} vs {b.shape}"
        )


def check_points(pts, name="points"):
    """Validate an (N, 2) float array of 2-D coordinates."""
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (N, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
