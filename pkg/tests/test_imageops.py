import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lpcnn.imageops import (MNIST_CENTER, BadFactor, InterpMode, bilinear_sample,
                            circular_shift_columns, rotate, rotation_sampler, scale,
                            scale_sampler, shift_rows)

NEAREST = InterpMode.NEAREST

images = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                elements=st.floats(0, 1))


def point(h, w, x, y):
    img = np.zeros((h, w))
    img[y, x] = 1.0
    return img


class TestBilinearSample:
    def test_integer_pixel(self, rng):
        img = rng.random((8, 6))
        assert bilinear_sample(img, 3, 4) == img[4, 3]

    def test_far_outside_is_zero(self, rng):
        assert bilinear_sample(rng.random((5, 5)), -10, -10) == 0.0

    def test_midpoint(self):
        assert bilinear_sample(np.array([[0.0, 1.0], [0.0, 1.0]]), 0.5, 0.5) == 0.5

    def test_partial_overlap_counts_missing_as_zero(self):
        img = np.ones((3, 3))
        assert bilinear_sample(img, -0.5, 1.0) == pytest.approx(0.5)
        assert bilinear_sample(img, 2.25, 2.25) == pytest.approx(0.75 * 0.75)

    def test_just_outside_border(self):
        assert bilinear_sample(np.ones((3, 3)), -0.51, 1.0) == 0.0


class TestRotate:
    def test_zero_is_exact(self, rng):
        img = rng.random((28, 28)).astype(np.float32)
        np.testing.assert_array_equal(rotate(img, 0.0, MNIST_CENTER), img)

    def test_quarter_turns_round_trip(self, rng):
        img = rng.random((28, 28))
        back = rotate(rotate(img, 90, MNIST_CENTER, NEAREST), 270, MNIST_CENTER, NEAREST)
        assert np.abs(back - img).mean() <= 1e-6

    def test_bright_pixel_direction(self):
        out = rotate(point(28, 28, 20, 14), 90, (14, 14))
        assert np.unravel_index(out.argmax(), out.shape) == (20, 14)  # (row y, col x)
        assert out[20, 14] == 1.0

    def test_shape_preserved_and_batched(self, rng):
        imgs = rng.random((3, 10, 7))
        out = rotate(imgs, 33)
        assert out.shape == imgs.shape
        np.testing.assert_allclose(out[1], rotate(imgs[1], 33))

    def test_non_finite_angle(self):
        with pytest.raises(ValueError):
            rotate(np.zeros((4, 4)), float("nan"))

    @settings(max_examples=50, deadline=None)
    @given(images, st.integers(-3, 3))
    def test_full_turns_identity_nearest(self, img, n):
        np.testing.assert_array_equal(rotate(img, 360 * n, mode=NEAREST), img)

    @settings(max_examples=50, deadline=None)
    @given(images, st.integers(-3, 3))
    def test_full_turns_identity_bilinear(self, img, n):
        assert np.abs(rotate(img, 360 * n) - img).mean() <= 1e-6


class TestScale:
    def test_identity_nearest(self, rng):
        img = rng.random((28, 28))
        np.testing.assert_array_equal(scale(img, 1.0, MNIST_CENTER, NEAREST), img)

    def test_uniform_interior(self):
        out = scale(np.full((28, 28), 0.5), 0.5, MNIST_CENTER)
        ys, xs = np.mgrid[0:28, 0:28]
        inner = np.hypot(xs - 13.5, ys - 13.5) <= 6
        np.testing.assert_allclose(out[inner], 0.5)

    def test_bright_pixel_moves_toward_centre(self):
        out = scale(point(28, 28, 26, 14), 0.5, (14, 14))
        assert out[14, 20] == 1.0
        assert out.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("f", [0.0, -0.5, 1.01, 2.0])
    def test_bad_factor(self, f):
        with pytest.raises(BadFactor):
            scale(np.zeros((4, 4)), f)


class TestShifts:
    def test_columns_examples(self, rng):
        img = rng.random((3, 5))
        np.testing.assert_array_equal(circular_shift_columns(img, 0), img)
        np.testing.assert_array_equal(circular_shift_columns(img, 5), img)
        two = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(circular_shift_columns(two, 1), two[:, ::-1])

    def test_column_semantics(self, rng):
        img = rng.random((2, 7))
        out = circular_shift_columns(img, 3)
        for j in range(7):
            np.testing.assert_array_equal(out[:, j], img[:, (j - 3) % 7])

    @given(images, st.integers(-30, 30), st.integers(-30, 30))
    def test_columns_compose(self, img, a, b):
        w = img.shape[1]
        lhs = circular_shift_columns(circular_shift_columns(img, a), b)
        np.testing.assert_array_equal(lhs, circular_shift_columns(img, (a + b) % w))

    def test_rows_examples(self):
        img = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        np.testing.assert_array_equal(shift_rows(img, 0), img)
        np.testing.assert_array_equal(shift_rows(img, 3, fill=0.25), np.full((3, 2), 0.25))
        np.testing.assert_array_equal(shift_rows(img, 1), [[0, 0], [1, 1], [2, 2]])
        np.testing.assert_array_equal(shift_rows(img, -1), [[2, 2], [3, 3], [0, 0]])

    @given(images, st.integers(-15, 15), st.floats(0, 1))
    def test_rows_keep_content_or_fill(self, img, k, fill):
        out = shift_rows(img, k, fill)
        h = img.shape[0]
        for i in range(h):
            src = i - k
            expect = img[src] if 0 <= src < h else np.full(img.shape[1], fill)
            np.testing.assert_array_equal(out[i], expect)


def _max_weight_sum(sampler):
    """Largest total weight any single source pixel contributes to the output."""
    h, w = sampler.src_shape
    return np.bincount(sampler.index.ravel(), sampler.weight.ravel(), minlength=h * w).max()


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (28, 28), elements=st.floats(0, 1)),
       st.floats(-720, 720), st.floats(0.05, 1.0))
def test_output_never_brighter_than_input(img, angle, factor):
    # each output pixel is a convex blend (or partial blend with 0) of input pixels
    assert rotate(img, angle).max() <= img.max() + 1e-12
    assert scale(img, factor).max() <= img.max() + 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (28, 28), elements=st.floats(0, 1)),
       st.floats(0, 360), st.floats(0.05, 1.0))
def test_total_intensity_bounded_by_resampling_weights(img, angle, factor):
    # the true bound for pull-bilinear resampling: sum_out <= max column weight * sum_in
    rs = rotation_sampler(img.shape, angle)
    assert rs(img).sum() <= _max_weight_sum(rs) * img.sum() + 1e-9
    ss = scale_sampler(img.shape, factor)
    assert ss(img).sum() <= _max_weight_sum(ss) * img.sum() + 1e-9
    # shrinking never gathers more than one unit of weight per source pixel
    assert _max_weight_sum(ss) <= 1.0 + 1e-12


def test_energy_non_creation_scale_on_mnist(digits):
    for f in (0.9, 0.8, 0.7, 0.6, 0.5, 0.4):
        gain = scale(digits, f, MNIST_CENTER).sum(axis=(1, 2)) - digits.sum(axis=(1, 2))
        assert gain.max() <= 1e-3 * 28 * 28


@pytest.mark.xfail(strict=True, reason="pull-bilinear rotation can concentrate up to ~1.3 "
                   "units of weight on one source pixel, so a thin stroke gains more "
                   "than 1e-3*w*h total intensity")
def test_energy_non_creation_rotation_on_mnist(digits):
    for a in range(0, 360, 15):
        gain = rotate(digits, a, MNIST_CENTER).sum(axis=(1, 2)) - digits.sum(axis=(1, 2))
        assert gain.max() <= 1e-3 * 28 * 28
