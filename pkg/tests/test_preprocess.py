import numpy as np
import pytest

from spinefuse.core import NORMALIZED, GrayImage, LandmarkSet, PixelFrame, ValidationError, landmark_frame_convert
from spinefuse.preprocess import equalize_histogram, resize_bilinear, resize_landmarks


class TestEqualizeHistogram:
    def test_constant_image_unchanged(self):
        img = GrayImage.from_flat(3, 3, [77] * 9, 1.0)
        out = equalize_histogram(img)
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_two_level_image(self):
        # cdf(0)=2, cdf(255)=4, cdf_min=2 -> extremes stay put
        img = GrayImage.from_flat(2, 2, [0, 0, 255, 255], 1.0)
        out = equalize_histogram(img)
        np.testing.assert_array_equal(out.pixels.ravel(), [0, 0, 255, 255])

    def test_hand_derived_three_levels(self):
        # cdf = {10: 1, 20: 3, 30: 4}, cdf_min = 1
        # -> round(0/3*255)=0, round(2/3*255)=170, round(3/3*255)=255
        img = GrayImage.from_flat(2, 2, [10, 20, 20, 30], 1.0)
        out = equalize_histogram(img)
        np.testing.assert_array_equal(out.pixels.ravel(), [0, 170, 170, 255])

    def test_dimensions_and_spacing_preserved(self):
        rng = np.random.default_rng(0)
        img = GrayImage(rng.integers(0, 256, (17, 9), dtype=np.uint8), 0.7)
        out = equalize_histogram(img)
        assert (out.width, out.height, out.spacing) == (9, 17, 0.7)

    def test_idempotent_on_two_bin_images(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            lo, hi = sorted(rng.choice(256, size=2, replace=False))
            pix = rng.choice([lo, hi], size=(8, 8)).astype(np.uint8)
            img = GrayImage(pix, 1.0)
            once = equalize_histogram(img)
            twice = equalize_histogram(once)
            np.testing.assert_array_equal(once.pixels, twice.pixels)

    def test_preserves_intensity_ordering(self):
        rng = np.random.default_rng(2)
        img = GrayImage(rng.integers(0, 256, (32, 32), dtype=np.uint8), 1.0)
        out = equalize_histogram(img)
        flat_in = img.pixels.ravel().astype(int)
        flat_out = out.pixels.ravel().astype(int)
        order = np.argsort(flat_in, kind="stable")
        assert np.all(np.diff(flat_out[order]) >= 0)


class TestResizeBilinear:
    def test_identity_resize(self):
        rng = np.random.default_rng(3)
        img = GrayImage(rng.integers(0, 256, (12, 7), dtype=np.uint8), 1.0)
        out = resize_bilinear(img, 7, 12)
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_single_pixel_extends_constant(self):
        img = GrayImage.from_flat(1, 1, [42], 1.0)
        out = resize_bilinear(img, 3, 3)
        np.testing.assert_array_equal(out.pixels, np.full((3, 3), 42))

    def test_half_pixel_center_alignment(self):
        # sample coords for 2->4 upscale are -0.25, 0.25, 0.75, 1.25
        img = GrayImage.from_flat(2, 1, [0, 100], 1.0)
        out = resize_bilinear(img, 4, 1)
        np.testing.assert_array_equal(out.pixels.ravel(), [0, 25, 75, 100])

    def test_output_within_input_range(self):
        rng = np.random.default_rng(4)
        img = GrayImage(rng.integers(30, 200, (20, 20), dtype=np.uint8), 1.0)
        for w, h in [(7, 7), (33, 15), (40, 40)]:
            out = resize_bilinear(img, w, h)
            assert out.pixels.min() >= img.pixels.min()
            assert out.pixels.max() <= img.pixels.max()

    def test_spacing_rescaled(self):
        img = GrayImage(np.zeros((512, 512), dtype=np.uint8), 0.5)
        out = resize_bilinear(img, 256, 256)
        assert out.spacing == pytest.approx(1.0)

    def test_bad_size(self):
        img = GrayImage.from_flat(2, 2, [0, 0, 0, 0], 1.0)
        with pytest.raises(ValidationError):
            resize_bilinear(img, 0, 4)


class TestResizeLandmarks:
    def test_center_maps_to_center(self):
        lms = LandmarkSet(np.array([[256.0, 256.0]]), PixelFrame(512, 512))
        out = resize_landmarks(lms, 299, 299)
        np.testing.assert_allclose(out.points, [[149.5, 149.5]])

    def test_origin_fixed(self):
        lms = LandmarkSet(np.array([[0.0, 0.0]]), PixelFrame(512, 512))
        out = resize_landmarks(lms, 299, 299)
        np.testing.assert_array_equal(out.points, [[0.0, 0.0]])

    def test_halving(self):
        lms = LandmarkSet(np.array([[100.0, 400.0]]), PixelFrame(512, 512))
        out = resize_landmarks(lms, 256, 256)
        np.testing.assert_allclose(out.points, [[50.0, 200.0]])

    def test_out_of_bounds_input_rejected(self):
        lms = LandmarkSet(np.array([[600.0, 10.0]]), PixelFrame(512, 512))
        with pytest.raises(ValidationError):
            resize_landmarks(lms, 256, 256)

    def test_commutes_with_frame_conversion(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(0, 511.9, (50, 2))
        lms = LandmarkSet(pts, PixelFrame(512, 512))
        via_resize = landmark_frame_convert(resize_landmarks(lms, 299, 299), NORMALIZED)
        direct = landmark_frame_convert(lms, NORMALIZED)
        np.testing.assert_allclose(via_resize.points, direct.points, atol=1e-9)
