import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from demiguise import imaging

from oracles import psnr_scalar, ssim_loop


def _rand_image(seed, size=32):
    return np.random.default_rng(seed).random((3, size, size)).astype(np.float32)


finite_images = arrays(
    np.float32, (3, 12, 12),
    elements=st.floats(0.0, 1.0, width=32, allow_nan=False),
)


class TestLoadAndPreprocess:
    def test_constant_image_is_crop_invariant(self, tmp_path):
        path = str(tmp_path / "gray.png")
        imaging.save_image(np.full((3, 256, 256), 0.5, np.float32), path)
        stored = 32768 / 65535  # 16-bit quantization of 0.5
        out = imaging.load_and_preprocess(path, resize_to=256, crop_to=224)
        assert out.shape == (3, 224, 224)
        assert np.allclose(out, stored, atol=1e-7)

    def test_constant_preprocess_in_memory_exact(self):
        raw = np.full((300, 260, 3), 0.5, np.float32)
        out = imaging.preprocess(raw, 256, 224)
        assert out.shape == (3, 224, 224)
        assert np.all(out == 0.5)

    def test_desk_profile_shape(self, tmp_path):
        path = str(tmp_path / "img.png")
        imaging.save_image(_rand_image(0, 40), path)
        out = imaging.load_and_preprocess(path, resize_to=36, crop_to=32)
        assert out.shape == (3, 32, 32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_too_small_after_resize_errors(self, tmp_path):
        path = str(tmp_path / "small.png")
        imaging.save_image(_rand_image(1, 10), path)
        with pytest.raises(ValueError, match="too small"):
            imaging.load_and_preprocess(path, resize_to=10, crop_to=224)

    def test_unreadable_file_errors(self, tmp_path):
        bogus = tmp_path / "not_an_image.png"
        bogus.write_bytes(b"definitely not a png")
        with pytest.raises(ValueError, match="unreadable"):
            imaging.load_and_preprocess(str(bogus), 36, 32)
        with pytest.raises(ValueError, match="unreadable"):
            imaging.load_and_preprocess(str(tmp_path / "missing.png"), 36, 32)

    def test_deterministic_loads(self, tmp_path):
        path = str(tmp_path / "img.png")
        imaging.save_image(_rand_image(2, 48), path)
        a = imaging.load_and_preprocess(path, 36, 32)
        b = imaging.load_and_preprocess(path, 36, 32)
        assert np.array_equal(a, b)

    def test_aspect_ratio_shorter_side(self, tmp_path):
        path = str(tmp_path / "wide.png")
        imaging.save_image(_rand_image(3, 40)[:, :20, :], path)  # 20x40
        out = imaging.load_and_preprocess(path, resize_to=30, crop_to=30)
        assert out.shape == (3, 30, 30)


class TestPsnr:
    def test_identical_inputs_sentinel(self):
        x = _rand_image(4)
        assert imaging.psnr(x, x) == imaging.PSNR_SENTINEL_DB

    def test_uniform_difference_closed_form(self):
        a = np.zeros((3, 8, 8))
        b = np.full((3, 8, 8), 0.1)
        assert abs(imaging.psnr(a, b) - 20.0) < 1e-9

    def test_full_scale_difference_is_zero_db(self):
        a = np.zeros((3, 8, 8))
        b = np.ones((3, 8, 8))
        assert imaging.psnr(a, b) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            imaging.psnr(np.zeros((3, 8, 8)), np.zeros((3, 9, 8)))

    @settings(max_examples=25, deadline=None)
    @given(finite_images, finite_images)
    def test_symmetry_exact(self, a, b):
        assert imaging.psnr(a, b) == imaging.psnr(b, a)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            a, b = rng.random((3, 8, 8)), rng.random((3, 8, 8))
            assert abs(imaging.psnr(a, b) - psnr_scalar(a, b)) < 1e-6


class TestSsim:
    def test_self_similarity_exactly_one(self):
        for seed in range(3):
            x = _rand_image(seed)
            assert imaging.ssim(x, x) == 1.0

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(11)
        a, b = rng.random((3, 32, 32)), rng.random((3, 32, 32))
        assert abs(imaging.ssim(a, b) - ssim_loop(a, b)) < 1e-4

    def test_inverted_structure_below_one(self):
        x = _rand_image(12)
        assert imaging.ssim(x, 1.0 - x) < 1.0

    @settings(max_examples=10, deadline=None)
    @given(finite_images, finite_images)
    def test_symmetry(self, a, b):
        assert abs(imaging.ssim(a, b) - imaging.ssim(b, a)) < 1e-9

    def test_window_larger_than_image_errors(self):
        with pytest.raises(ValueError, match="window"):
            imaging.ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            imaging.ssim(np.zeros((3, 16, 16)), np.zeros((3, 16, 17)))


class TestSaveImage:
    def test_round_trip_quantization_bound(self, tmp_path):
        path = str(tmp_path / "rt.png")
        for seed in range(3):
            x = _rand_image(seed)
            if os.path.exists(path):
                os.unlink(path)
            imaging.save_image(x, path)
            back = imaging.load_image(path)
            assert back.shape == x.shape
            assert np.abs(back - x).max() <= 1.0 / 65535

    def test_constant_round_trip(self, tmp_path):
        path = str(tmp_path / "c.png")
        imaging.save_image(np.full((3, 16, 16), 0.5, np.float32), path)
        back = imaging.load_image(path)
        assert np.abs(back - 0.5).max() <= 1.0 / 65535

    def test_unwritable_path_errors(self, tmp_path):
        with pytest.raises(ValueError, match="unwritable"):
            imaging.save_image(_rand_image(0), str(tmp_path / "nope" / "x.png"))

    def test_rejects_invalid_image(self):
        with pytest.raises(ValueError, match="outside"):
            imaging.save_image(np.full((3, 4, 4), 1.5, np.float32), "x.png")
        with pytest.raises(ValueError, match="shape"):
            imaging.save_image(np.zeros((1, 4, 4), np.float32), "x.png")


class TestValidateImage:
    def test_accepts_valid(self):
        out = imaging.validate_image(np.zeros((3, 4, 4)))
        assert out.dtype == np.float32

    def test_rejects_nan(self):
        bad = np.zeros((3, 4, 4))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            imaging.validate_image(bad)
