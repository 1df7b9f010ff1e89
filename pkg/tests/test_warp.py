"""Thin-plate-spline fitting, bending energy, warping, and augmentation."""

import math

import numpy as np
import pytest

from sologen.warp import (
    BENDING_CONSTANT,
    DEFAULT_TPS_SMOOTHNESS,
    AugmentationSpec,
    TpsWarp,
    apply_warp,
    augment_sample,
    bending_energy,
    evaluate_warp,
    fit_tps,
    random_tps,
)


def reference_solve(src, tgt, lam):
    """Independent dense solve of the regularized TPS system."""
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    n = len(src)
    d2 = ((src[:, None, :] - src[None, :, :]) ** 2).sum(-1)
    k = d2 * np.log(np.where(d2 > 0.0, d2, 1.0))
    p = np.hstack([np.ones((n, 1)), src])
    lmat = np.zeros((n + 3, n + 3))
    lmat[:n, :n] = k + lam * np.eye(n)
    lmat[:n, n:] = p
    lmat[n:, :n] = p.T
    rhs = np.vstack([tgt, np.zeros((3, 2))])
    sol = np.linalg.lstsq(lmat, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def reference_evaluate(src, weights, affine, points):
    """Scalar-path spline evaluation f(p) = a0 + a1 x + a2 y + sum w U(|p-c|)."""
    out = np.zeros((len(points), 2))
    for i, (x, y) in enumerate(points):
        val = affine[0] + affine[1] * x + affine[2] * y
        for (cx, cy), wgt in zip(src, weights):
            r2 = (x - cx) ** 2 + (y - cy) ** 2
            if r2 > 0.0:
                val = val + wgt * r2 * math.log(r2)
        out[i] = val
    return out


def random_grid(rng, n=16, jitter=0.05):
    g = int(round(math.sqrt(n)))
    axis = np.linspace(0.1, 0.9, g)
    xx, yy = np.meshgrid(axis, axis)
    grid = np.stack([xx.ravel(), yy.ravel()], axis=1)
    return grid + rng.uniform(-jitter, jitter, grid.shape)


class TestFit:
    @pytest.mark.parametrize("lam", [0.0, 1e-3, 1e-2, 1e-1])
    def test_matches_independent_dense_solve(self, lam):
        rng = np.random.default_rng(int(lam * 1e6) + 1)
        src = random_grid(rng)
        tgt = src + rng.normal(0.0, 0.05, src.shape)
        warp = fit_tps(src, tgt, smoothness=lam)
        ref_w, ref_a = reference_solve(src, tgt, lam)
        probes = rng.uniform(-0.2, 1.2, (50, 2))
        got = evaluate_warp(warp, probes)
        want = reference_evaluate(src, ref_w, ref_a, probes)
        assert np.abs(got - want).max() <= 1e-8

    def test_identity_targets_give_identity_map(self):
        rng = np.random.default_rng(0)
        src = random_grid(rng)
        warp = fit_tps(src, src.copy(), smoothness=0.01)
        assert warp.is_identity()
        probes = rng.uniform(0.0, 1.0, (40, 2))
        assert np.abs(evaluate_warp(warp, probes) - probes).max() <= 1e-9
        assert np.abs(warp.radial_weights).max() <= 1e-9

    def test_affine_targets_recover_the_affine_map(self):
        rng = np.random.default_rng(1)
        src = random_grid(rng)
        amat = np.array([[1.1, 0.2], [-0.1, 0.9]])
        bvec = np.array([0.05, -0.02])
        tgt = src @ amat.T + bvec
        warp = fit_tps(src, tgt, smoothness=0.0)
        probes = rng.uniform(0.0, 1.0, (40, 2))
        want = probes @ amat.T + bvec
        assert np.abs(evaluate_warp(warp, probes) - want).max() <= 1e-9
        assert np.abs(warp.radial_weights).max() <= 1e-9

    def test_zero_smoothness_interpolates_targets(self):
        rng = np.random.default_rng(2)
        src = random_grid(rng)
        tgt = src + rng.normal(0.0, 0.08, src.shape)
        warp = fit_tps(src, tgt, smoothness=0.0)
        assert np.abs(evaluate_warp(warp, src) - tgt).max() <= 1e-8

    def test_side_conditions_hold(self):
        rng = np.random.default_rng(3)
        src = random_grid(rng)
        tgt = src + rng.normal(0.0, 0.05, src.shape)
        for lam in (0.0, 0.01, 0.5):
            warp = fit_tps(src, tgt, smoothness=lam)
            w = warp.radial_weights
            assert np.abs(w.sum(axis=0)).max() <= 1e-8
            assert np.abs(src.T @ w).max() <= 1e-8

    def test_solution_is_linear_in_targets(self):
        rng = np.random.default_rng(4)
        src = random_grid(rng)
        t1 = src + rng.normal(0.0, 0.05, src.shape)
        t2 = src + rng.normal(0.0, 0.05, src.shape)
        blend = 0.3 * t1 + 0.7 * t2
        probes = rng.uniform(0.0, 1.0, (30, 2))
        f1 = evaluate_warp(fit_tps(src, t1, 0.01), probes)
        f2 = evaluate_warp(fit_tps(src, t2, 0.01), probes)
        f3 = evaluate_warp(fit_tps(src, blend, 0.01), probes)
        assert np.abs(f3 - (0.3 * f1 + 0.7 * f2)).max() <= 1e-9

    def test_smoothness_trades_energy_for_residual(self):
        rng = np.random.default_rng(5)
        src = random_grid(rng)
        tgt = src + rng.normal(0.0, 0.08, src.shape)
        lams = [0.0, 1e-3, 1e-2, 1e-1, 1.0]
        energies, residuals = [], []
        for lam in lams:
            warp = fit_tps(src, tgt, smoothness=lam)
            energies.append(bending_energy(warp))
            residuals.append(
                float(np.linalg.norm(evaluate_warp(warp, src) - tgt))
            )
        for e0, e1 in zip(energies, energies[1:]):
            assert e1 <= e0 + 1e-9
        for r0, r1 in zip(residuals, residuals[1:]):
            assert r1 >= r0 - 1e-9

    def test_collinear_grid_raises(self):
        pts = np.stack([np.linspace(0, 1, 6), np.linspace(0, 1, 6)], axis=1)
        with pytest.raises(ValueError, match="collinear"):
            fit_tps(pts, pts + 0.01)

    def test_too_few_points_raise(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0]])
        with pytest.raises(ValueError):
            fit_tps(pts, pts)

    def test_negative_smoothness_raises(self):
        rng = np.random.default_rng(6)
        src = random_grid(rng)
        with pytest.raises(ValueError):
            fit_tps(src, src, smoothness=-0.1)

    def test_round_trip_through_dict(self):
        rng = np.random.default_rng(7)
        src = random_grid(rng)
        tgt = src + rng.normal(0.0, 0.05, src.shape)
        warp = fit_tps(src, tgt, smoothness=0.02)
        back = TpsWarp.from_dict(warp.to_dict())
        assert np.abs(back.affine - warp.affine).max() <= 1e-10
        assert np.abs(back.radial_weights - warp.radial_weights).max() <= 1e-10


class TestBendingEnergy:
    def test_affine_warp_has_zero_energy(self):
        rng = np.random.default_rng(0)
        src = random_grid(rng)
        tgt = src @ np.array([[1.2, 0.1], [0.0, 0.8]]).T + 0.05
        assert bending_energy(fit_tps(src, tgt, smoothness=0.0)) <= 1e-12

    def test_matches_plane_quadrature(self):
        rng = np.random.default_rng(3)
        src = rng.uniform(0.25, 0.75, (8, 2))
        tgt = src + rng.normal(0.0, 0.08, (8, 2))
        warp = fit_tps(src, tgt, smoothness=0.0)
        closed = bending_energy(warp)

        # Quadrature of integral(f_xx^2 + 2 f_xy^2 + f_yy^2) with analytic
        # second derivatives of U(r) = r^2 log r^2 over a window wide enough
        # that the discarded tail is negligible (weights sum to zero, so the
        # integrand decays like 1/r^4).
        n, ell = 901, 6.0
        xs = np.linspace(0.5 - ell / 2, 0.5 + ell / 2, n)
        xg, yg = np.meshgrid(xs, xs, indexing="ij")
        total = 0.0
        for coord in range(2):
            w = warp.radial_weights[:, coord]
            fxx = np.zeros_like(xg)
            fxy = np.zeros_like(xg)
            fyy = np.zeros_like(xg)
            for i, (cx, cy) in enumerate(warp.source_grid):
                dx = xg - cx
                dy = yg - cy
                r2 = np.where(dx * dx + dy * dy > 1e-30, dx * dx + dy * dy, 1.0)
                lg = np.log(r2)
                fxx += w[i] * (2.0 * lg + 2.0 + 4.0 * dx * dx / r2)
                fyy += w[i] * (2.0 * lg + 2.0 + 4.0 * dy * dy / r2)
                fxy += w[i] * (4.0 * dx * dy / r2)
            cell = (ell / (n - 1)) ** 2
            total += float((fxx**2 + 2.0 * fxy**2 + fyy**2).sum()) * cell
        assert closed > 0.0
        assert abs(total - closed) / closed <= 0.02

    def test_energy_is_never_negative(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            src = random_grid(rng)
            tgt = src + rng.normal(0.0, 0.05, src.shape)
            assert bending_energy(fit_tps(src, tgt, smoothness=0.05)) >= 0.0

    def test_constant_matches_sixteen_pi_quadform(self):
        rng = np.random.default_rng(12)
        src = random_grid(rng)
        tgt = src + rng.normal(0.0, 0.05, src.shape)
        warp = fit_tps(src, tgt, smoothness=0.0)
        d2 = ((src[:, None, :] - src[None, :, :]) ** 2).sum(-1)
        k = d2 * np.log(np.where(d2 > 0.0, d2, 1.0))
        quad = sum(
            float(warp.radial_weights[:, c] @ k @ warp.radial_weights[:, c])
            for c in range(2)
        )
        assert abs(bending_energy(warp) - 16.0 * math.pi * quad) <= 1e-9
        assert BENDING_CONSTANT == pytest.approx(16.0 * math.pi)


def _reflect_scalar(x, n):
    if n == 1:
        return 0.0
    period = 2.0 * (n - 1)
    c = abs(x) % period
    return period - c if c > n - 1 else c


def _bilinear_scalar(img, x, y):
    h, w = img.shape[:2]
    x = _reflect_scalar(x, w)
    y = _reflect_scalar(y, h)
    x0 = min(max(int(math.floor(x)), 0), w - 1)
    y0 = min(max(int(math.floor(y)), 0), h - 1)
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


class TestApplyWarp:
    def test_identity_warp_preserves_image(self, smoke_image):
        rng = np.random.default_rng(0)
        src = random_grid(rng)
        warp = fit_tps(src, src.copy(), smoothness=0.01)
        out = apply_warp(warp, smoke_image)
        assert np.abs(out - smoke_image).max() <= 1e-6

    def test_probe_pixels_match_scalar_backward_oracle(self, smoke_image):
        rng = np.random.default_rng(1)
        src = random_grid(rng)
        tgt = src + rng.normal(0.0, 0.03, src.shape)
        warp = fit_tps(src, tgt, smoothness=0.01)
        out = apply_warp(warp, smoke_image)

        ref_w, ref_a = reference_solve(tgt, src, 0.01)
        h, w = smoke_image.shape[:2]
        img64 = smoke_image.astype(np.float64)
        for _ in range(30):
            r = int(rng.integers(0, h))
            c = int(rng.integers(0, w))
            pt = np.array([[c / (w - 1), r / (h - 1)]])
            fx, fy = reference_evaluate(tgt, ref_w, ref_a, pt)[0]
            want = _bilinear_scalar(img64, fx * (w - 1), fy * (h - 1))
            want = np.clip(want, -1.0, 1.0)
            assert np.abs(out[r, c] - want).max() <= 1e-6

    def test_output_stays_in_range(self, smoke_image):
        rng = np.random.default_rng(2)
        src = random_grid(rng)
        tgt = src + rng.normal(0.0, 0.06, src.shape)
        out = apply_warp(fit_tps(src, tgt), smoke_image)
        assert out.min() >= -1.0 and out.max() <= 1.0
        assert out.shape == smoke_image.shape

    def test_constant_image_is_invariant(self):
        img = np.full((20, 24, 3), 0.3, dtype=np.float32)
        rng = np.random.default_rng(3)
        src = random_grid(rng)
        tgt = src + rng.normal(0.0, 0.05, src.shape)
        out = apply_warp(fit_tps(src, tgt), img)
        assert np.abs(out - 0.3).max() <= 1e-6


class TestRandomTps:
    def test_zero_magnitude_is_identity(self):
        spec = AugmentationSpec(tps_magnitude=0.0)
        warp = random_tps(spec, np.random.default_rng(0))
        assert warp.is_identity()

    def test_displacements_bounded_by_magnitude_times_spacing(self):
        spec = AugmentationSpec(tps_magnitude=0.1, tps_grid=4)
        bound = 0.1 / (4 - 1)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            warp = random_tps(spec, rng)
            disp = np.abs(warp.targets - warp.source_grid)
            assert disp.max() <= bound + 1e-12

    def test_same_rng_state_reproduces_the_draw(self):
        spec = AugmentationSpec(tps_magnitude=0.15)
        w1 = random_tps(spec, np.random.default_rng(42))
        w2 = random_tps(spec, np.random.default_rng(42))
        assert np.array_equal(w1.targets, w2.targets)

    def test_uses_default_smoothness(self):
        warp = random_tps(AugmentationSpec(), np.random.default_rng(1))
        assert warp.smoothness == DEFAULT_TPS_SMOOTHNESS


class TestAugmentSample:
    def disabled_spec(self):
        return AugmentationSpec(
            crop_fraction_range=(1.0, 1.0), flip_probability=0.0, tps_magnitude=0.0
        )

    def test_disabled_augmentation_is_exact_identity(self, smoke_image):
        sample = augment_sample(smoke_image, spec=self.disabled_spec())
        assert np.array_equal(sample.image, smoke_image)

    def test_condition_gets_the_identical_transform(self, smoke_image):
        spec = AugmentationSpec(seed=5)
        sample = augment_sample(
            smoke_image, condition=smoke_image.copy(), spec=spec
        )
        assert np.array_equal(sample.image, sample.condition)

    def test_same_rng_reproduces_the_sample(self, smoke_image):
        spec = AugmentationSpec()
        s1 = augment_sample(smoke_image, spec=spec, rng=np.random.default_rng(9))
        s2 = augment_sample(smoke_image, spec=spec, rng=np.random.default_rng(9))
        assert np.array_equal(s1.image, s2.image)
        assert s1.warp_record == s2.warp_record

    def test_different_rng_changes_the_sample(self, smoke_image):
        spec = AugmentationSpec()
        s1 = augment_sample(smoke_image, spec=spec, rng=np.random.default_rng(1))
        s2 = augment_sample(smoke_image, spec=spec, rng=np.random.default_rng(2))
        assert not np.array_equal(s1.image, s2.image)

    def test_record_replays_the_transform(self, smoke_image):
        from sologen.imaging import resample

        spec = AugmentationSpec(seed=3)
        sample = augment_sample(smoke_image, spec=spec)
        rec = sample.warp_record
        top, left, ch, cw = rec["crop_box"]
        h, w = smoke_image.shape[:2]
        replay = smoke_image[top:top + ch, left:left + cw]
        if (ch, cw) != (h, w):
            replay = resample(replay, h, w)
        if rec["flipped"]:
            replay = np.ascontiguousarray(replay[:, ::-1])
        warp = TpsWarp.from_dict(rec["warp"])
        if not warp.is_identity():
            replay = apply_warp(warp, replay)
        assert np.array_equal(replay, sample.image)

    def test_output_dims_match_input(self, smoke_image):
        sample = augment_sample(smoke_image, spec=AugmentationSpec(seed=2))
        assert sample.image.shape == smoke_image.shape

    def test_crop_fraction_within_configured_range(self, smoke_image):
        spec = AugmentationSpec(crop_fraction_range=(0.6, 0.8))
        rng = np.random.default_rng(0)
        for _ in range(50):
            sample = augment_sample(smoke_image, spec=spec, rng=rng)
            assert 0.6 <= sample.warp_record["crop_fraction"] <= 0.8

    def test_condition_shape_mismatch_raises(self, smoke_image):
        bad = np.zeros((8, 8, 3), dtype=np.float32)
        with pytest.raises(ValueError):
            augment_sample(smoke_image, condition=bad)
