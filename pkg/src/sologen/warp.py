"""Thin-plate-spline warping and the training augmentation pipeline.

Warps are fitted and evaluated in normalized image coordinates: points are
(x, y) pairs with x horizontal, both in [0, 1]. The radial kernel is
U(d) = d^2 log d^2 with U(0) = 0.

A fitted warp decomposes into an affine part and a radial part whose
weights satisfy the orthogonality side conditions (sum w = 0 and
sum w * grid = 0 per output coordinate), which make the bending energy a
quadratic form in the radial weights.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import resample
from .validation import check_image, check_points, check_same_shape

DEFAULT_TPS_SMOOTHNESS = 0.01

# E = BENDING_CONSTANT * w^T K w per output coordinate, for the
# d^2 log d^2 kernel convention (twice the r^2 log r Green's function).
BENDING_CONSTANT = 16.0 * math.pi


def _tps_kernel(r2):
    """U as a function of squared distance; 0 at r = 0."""
    r2 = np.asarray(r2, dtype=np.float64)
    return r2 * np.log(np.where(r2 > 0.0, r2, 1.0))


def _kernel_matrix(points_a, points_b):
    diff = points_a[:, None, :] - points_b[None, :, :]
    return _tps_kernel((diff**2).sum(axis=2))


@dataclass
class TpsWarp:
    """A fitted thin-plate-spline map f: [0,1]^2 -> R^2.

    Attributes:
        source_grid: (N, 2) control points.
        targets: (N, 2) displaced control points f should reach.
        smoothness: regularization weight (lambda >= 0) used in the fit.
        affine: (3, 2) coefficients; rows are (constant, x, y) terms.
        radial_weights: (N, 2) kernel weights, one column per output coord.
    """

    source_grid: np.ndarray
    targets: np.ndarray
    smoothness: float
    affine: np.ndarray
    radial_weights: np.ndarray

    def is_identity(self, tol=0.0):
        return bool(np.all(np.abs(self.targets - self.source_grid) <= tol))

    def to_dict(self):
        """JSON-ready record; refitting reproduces the coefficients."""
        return {
            "source_grid": self.source_grid.tolist(),
            "targets": self.targets.tolist(),
            "smoothness": float(self.smoothness),
        }

    @classmethod
    def from_dict(cls, d):
        return fit_tps(
            np.asarray(d["source_grid"], dtype=np.float64),
            np.asarray(d["targets"], dtype=np.float64),
            d["smoothness"],
        )


def fit_tps(source_grid, targets, smoothness=DEFAULT_TPS_SMOOTHNESS):
    """Fit the regularized thin-plate spline mapping source points to targets.

    Solves [[K + lambda*I, P], [P^T, 0]] [w; a] = [t; 0], where K is the
    radial kernel matrix of the source points and P = [1, x, y]. With
    smoothness 0 the warp interpolates the targets exactly.

    Raises:
        ValueError: fewer than 3 control points, a collinear (degenerate)
            grid, or negative smoothness.
    """
    src = check_points(source_grid, "source_grid")
    tgt = check_points(targets, "targets")
    if src.shape != tgt.shape:
        raise ValueError(
            f"source_grid and targets disagree: {src.shape} vs {tgt.shape}"
        )
    if smoothness < 0.0:
        raise ValueError(f"smoothness must be >= 0, got {smoothness}")
    n = src.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 control points, got {n}")
    ones = np.ones((n, 1), dtype=np.float64)
    p = np.hstack([ones, src])
    if np.linalg.matrix_rank(p, tol=1e-10) < 3:
        raise ValueError("degenerate control-point configuration: grid is collinear")
    k = _kernel_matrix(src, src)
    lmat = np.zeros((n + 3, n + 3), dtype=np.float64)
    lmat[:n, :n] = k + smoothness * np.eye(n)
    lmat[:n, n:] = p
    lmat[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2), dtype=np.float64)
    rhs[:n] = tgt
    try:
        sol = np.linalg.solve(lmat, rhs)
    except np.linalg.LinAlgError:
        raise ValueError(
            "degenerate control-point configuration: TPS system is singular"
        ) from None
    return TpsWarp(
        source_grid=src,
        targets=tgt,
        smoothness=float(smoothness),
        affine=sol[n:],
        radial_weights=sol[:n],
    )


def evaluate_warp(warp, points):
    """Evaluate f at the given (M, 2) points; returns an (M, 2) array."""
    pts = check_points(points, "points")
    u = _kernel_matrix(pts, warp.source_grid)
    p = np.hstack([np.ones((pts.shape[0], 1)), pts])
    return p @ warp.affine + u @ warp.radial_weights


def bending_energy(warp):
    """Integral of squared second derivatives of f over the plane.

    Computed as the standard quadratic form in the radial weights (summed
    over the two output coordinates); exactly 0 for affine warps.
    """
    k = _kernel_matrix(warp.source_grid, warp.source_grid)
    quad = np.einsum("ic,ij,jc->", warp.radial_weights, k, warp.radial_weights)
    return max(BENDING_CONSTANT * float(quad), 0.0)


def _reflect_coord(coords, n):
    """Mirror continuous pixel coords into [0, n-1] (reflect at centers)."""
    if n == 1:
        return np.zeros_like(coords)
    period = 2.0 * (n - 1)
    c = np.mod(np.abs(coords), period)
    return np.where(c > n - 1, period - c, c)


def _bilinear_sample(img, xs, ys):
    """Sample img at float pixel coords (xs, ys), reflecting out of bounds."""
    h, w = img.shape[:2]
    xs = _reflect_coord(xs, w)
    ys = _reflect_coord(ys, h)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def apply_warp(warp, img):
    """Warp an image with the fitted spline (backward warping).

    The sampling map — output pixel to source location — is obtained by
    fitting the spline with source and target roles swapped (same
    smoothness), which sidesteps numerical inversion of f. Samples are
    bilinear; coordinates outside the image are reflected.
    """
    img = check_image(img)
    h, w = img.shape[:2]
    backward = fit_tps(warp.targets, warp.source_grid, warp.smoothness)
    xn = np.arange(w, dtype=np.float64) / max(w - 1, 1)
    yn = np.arange(h, dtype=np.float64) / max(h - 1, 1)
    xx, yy = np.meshgrid(xn, yn)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    src = evaluate_warp(backward, pts)
    xs = (src[:, 0] * max(w - 1, 1)).reshape(h, w)
    ys = (src[:, 1] * max(h - 1, 1)).reshape(h, w)
    out = _bilinear_sample(img.astype(np.float64), xs, ys)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


@dataclass
class AugmentationSpec:
    """Randomized-augmentation configuration for training draws.

    crop_fraction_range bounds the crop *area* as a fraction of the image;
    tps_magnitude scales control-point displacement relative to the grid
    spacing; tps_grid is the control grid side length.
    """

    crop_fraction_range: tuple = (0.85, 1.0)
    flip_probability: float = 0.5
    tps_magnitude: float = 0.1
    tps_grid: int = 4
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.crop_fraction_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(
                f"crop_fraction_range must satisfy 0 < lo <= hi <= 1, got {(lo, hi)}"
            )
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(
                f"flip_probability must be in [0, 1], got {self.flip_probability}"
            )
        if self.tps_magnitude < 0.0:
            raise ValueError(f"tps_magnitude must be >= 0, got {self.tps_magnitude}")
        if self.tps_grid < 2:
            raise ValueError(f"tps_grid must be >= 2, got {self.tps_grid}")


@dataclass
class AugmentedSample:
    """One augmented draw: the warped image, its paired condition, the record."""

    image: np.ndarray
    condition: np.ndarray = None
    warp_record: dict = field(default_factory=dict)


def random_tps(spec, rng):
    """Draw a random warp on an equi-spaced tps_grid x tps_grid control grid.

    Each target is its grid point plus a uniform displacement in [-m, m]^2
    with m = tps_magnitude * grid spacing.
    """
    g = spec.tps_grid
    axis = np.linspace(0.0, 1.0, g)
    xx, yy = np.meshgrid(axis, axis)
    grid = np.stack([xx.ravel(), yy.ravel()], axis=1)
    spacing = 1.0 / (g - 1)
    m = spec.tps_magnitude * spacing
    disp = rng.uniform(-m, m, size=grid.shape)
    return fit_tps(grid, grid + disp, DEFAULT_TPS_SMOOTHNESS)


def _random_crop_box(h, w, fraction, rng):
    """Crop box (top, left, crop_h, crop_w) for a given area fraction."""
    side = math.sqrt(fraction)
    crop_h = max(1, round(h * side))
    crop_w = max(1, round(w * side))
    top = int(rng.integers(0, h - crop_h + 1))
    left = int(rng.integers(0, w - crop_w + 1))
    return top, left, crop_h, crop_w


def augment_sample(img, condition=None, spec=None, rng=None):
    """Randomly augment an image (and its paired condition identically).

    Applies, in order: a random crop resized back to the original dims, a
    horizontal flip, and a random thin-plate-spline warp. The identical
    geometric transform is applied to the condition, so pairs stay aligned.
    The returned record (crop box, flip flag, warp) replays the transform
    exactly.
    """
    img = check_image(img)
    if condition is not None:
        condition = check_image(condition, name="condition")
        check_same_shape(img, condition, "img", "condition")
    if spec is None:
        spec = AugmentationSpec()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    h, w = img.shape[:2]

    lo, hi = spec.crop_fraction_range
    fraction = float(rng.uniform(lo, hi))
    box = _random_crop_box(h, w, fraction, rng)
    flipped = bool(rng.uniform() < spec.flip_probability)
    warp = random_tps(spec, rng)

    def transform(x):
        top, left, ch, cw = box
        out = x[top:top + ch, left:left + cw]
        if (ch, cw) != (h, w):
            out = resample(out, h, w)
        if flipped:
            out = np.ascontiguousarray(out[:, ::-1])
        if not warp.is_identity():
            out = apply_warp(warp, out)
        return out

    record = {
        "crop_box": list(box),
        "crop_fraction": fraction,
        "flipped": flipped,
        "warp": warp.to_dict(),
    }
    return AugmentedSample(
        image=transform(img),
        condition=None if condition is None else transform(condition),
        warp_record=record,
    )
