"""sklearn-style estimator facade: params, fit lifecycle, persistence."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sologen.estimator import SingleImageGenerator
from sologen.warp import AugmentationSpec

TINY = dict(
    iterations=20,
    loss_mode="pixel",
    min_dim=18,
    max_dim=32,
    seed=0,
    augmentation=AugmentationSpec(seed=0),
)


@pytest.fixture(scope="module")
def fitted(tiny_image_path):
    est = SingleImageGenerator(**TINY)
    return est.fit(tiny_image_path)


class TestParams:
    def test_get_params_round_trip(self):
        est = SingleImageGenerator(iterations=123, loss_mode="pixel")
        params = est.get_params()
        assert params["iterations"] == 123
        assert params["loss_mode"] == "pixel"
        est.set_params(iterations=456)
        assert est.get_params()["iterations"] == 456

    def test_constructor_stores_params_verbatim(self):
        spec = AugmentationSpec(seed=9)
        est = SingleImageGenerator(augmentation=spec, seed=9)
        assert est.augmentation is spec
        assert est.seed == 9

    def test_clone_copies_params_and_drops_fit_state(self, fitted):
        fresh = clone(fitted)
        assert fresh.get_params() == fitted.get_params()
        with pytest.raises(NotFittedError):
            fresh.synthesize()

    def test_unknown_param_rejected(self):
        with pytest.raises(ValueError):
            SingleImageGenerator().set_params(epochs=3)


class TestFitLifecycle:
    @pytest.mark.parametrize(
        "method, args",
        [
            ("interpolate", (None, None, 0.5)),
            ("animate", ()),
            ("synthesize", ()),
            ("paint2image", (None,)),
            ("edges2image", (None,)),
            ("harmonize", (None, None)),
            ("super_resolve", (None,)),
            ("save", ("nowhere",)),
        ],
    )
    def test_tasks_require_fit(self, method, args):
        est = SingleImageGenerator(**TINY)
        with pytest.raises(NotFittedError):
            getattr(est, method)(*args)

    def test_train_image_property_requires_fit(self):
        with pytest.raises(NotFittedError):
            SingleImageGenerator(**TINY).train_image_

    def test_fit_from_path_returns_self(self, fitted):
        assert isinstance(fitted, SingleImageGenerator)
        assert fitted.bundle_ is not None
        assert len(fitted.log_) == TINY["iterations"]
        assert fitted.train_image_.shape == (32, 32, 3)

    def test_fit_from_array(self, tiny_image_path):
        from sologen.imaging import load_image

        est = SingleImageGenerator(**TINY)
        est.fit(load_image(tiny_image_path))
        assert est.bundle_.train_image.shape == (32, 32, 3)

    def test_fit_rejects_bad_array(self):
        est = SingleImageGenerator(**TINY)
        with pytest.raises(ValueError):
            est.fit(np.zeros((4, 4), dtype=np.float32))


class TestTasks:
    def test_synthesize_dims(self, fitted):
        out = fitted.synthesize(count=1, seeds=(1, 2), alpha=0.5)
        assert out.shape == (32, 32, 3)
        assert np.all(np.isfinite(out))

    def test_animate_frame_count(self, fitted):
        frames = fitted.animate(frame_count=2)
        assert len(frames) == 3
        assert all(f.shape == (32, 32, 3) for f in frames)

    def test_interpolate_coarse_inputs_give_finest_output(self, fitted):
        from sologen.imaging import resample_array

        coarse = resample_array(fitted.train_image_, 18, 18)
        other = np.clip(coarse + 0.1, -1.0, 1.0).astype(np.float32)
        mid = fitted.interpolate(coarse, other, 0.5)
        assert mid.shape == (32, 32, 3)

    def test_harmonize_outside_mask_untouched(self, fitted):
        composite = fitted.train_image_.copy()
        composite[12:15, 12:15] = 0.7
        mask = np.full_like(composite, -1.0)
        mask[12:15, 12:15] = 1.0
        out = fitted.harmonize(composite, mask)
        assert out.shape == composite.shape
        assert np.array_equal(out[0, 0], composite[0, 0])

    def test_super_resolve_dims(self, fitted):
        out = fitted.super_resolve(fitted.train_image_, steps=1)
        assert out.shape == (43, 43, 3)

    def test_conditional_task_rejected_on_unconditional_model(self, fitted):
        with pytest.raises(ValueError, match="paint-quantized"):
            fitted.paint2image(fitted.train_image_)


class TestPersistence:
    def test_save_reload_round_trip(self, fitted, tmp_path):
        path = fitted.save(str(tmp_path / "ckpt"))
        loaded = SingleImageGenerator.from_checkpoint(path)
        assert loaded.iterations == TINY["iterations"]
        assert loaded.loss_mode == "pixel"
        assert loaded.min_dim == 18
        a = fitted.synthesize(count=1, seeds=(3, 4), alpha=0.25)
        b = loaded.synthesize(count=1, seeds=(3, 4), alpha=0.25)
        assert np.array_equal(a, b)

    def test_reloaded_estimator_counts_as_fitted(self, fitted, tmp_path):
        path = fitted.save(str(tmp_path / "ckpt"))
        loaded = SingleImageGenerator.from_checkpoint(path)
        assert loaded.train_image_.shape == (32, 32, 3)
