import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stemdegrade.errors import DimensionError, InvalidParameterError, SingularTransformError
from stemdegrade.imaging import (
    AffineParams,
    bilinear_sample,
    build_affine_matrix,
    compose_affine,
    degrade_forward,
    invert_affine,
    params_from_matrix,
    warp,
)

angles = st.floats(-170, 170, allow_nan=False)
shifts = st.floats(-50, 50, allow_nan=False)


def test_identity_matrix():
    np.testing.assert_array_equal(build_affine_matrix(AffineParams()), [[1, 0, 0], [0, 1, 0]])


def test_quarter_turn_matrix():
    m = build_affine_matrix(AffineParams(90, 1, 2))
    np.testing.assert_allclose(m, [[0, -1, 1], [1, 0, 2]], atol=1e-15)


@given(angles, shifts, shifts)
def test_matrix_is_rigid(th, tx, ty):
    m = build_affine_matrix(AffineParams(th, tx, ty))
    assert abs(np.linalg.det(m[:, :2]) - 1) < 1e-12
    np.testing.assert_allclose(m[:, :2] @ m[:, :2].T, np.eye(2), atol=1e-12)


@given(angles, shifts, shifts)
def test_invert_then_compose_is_identity(th, tx, ty):
    m = build_affine_matrix(AffineParams(th, tx, ty))
    np.testing.assert_allclose(compose_affine(m, invert_affine(m)), [[1, 0, 0], [0, 1, 0]], atol=1e-10)


@given(angles, shifts, shifts)
def test_params_round_trip(th, tx, ty):
    p = params_from_matrix(build_affine_matrix(AffineParams(th, tx, ty)))
    np.testing.assert_allclose(p.as_array(), [th, tx, ty], atol=1e-9)


def test_singular_raises():
    with pytest.raises(SingularTransformError):
        invert_affine(np.zeros((2, 3)))


@pytest.mark.parametrize("bad", [(180, 0, 0), (-180, 0, 0), (0, math.nan, 0), (0, 0, math.inf)])
def test_bad_params(bad):
    with pytest.raises(InvalidParameterError):
        AffineParams(*bad)


def test_identity_warp_bit_exact(rng):
    img = rng.random((17, 23))
    assert np.array_equal(degrade_forward(img, np.ones_like(img), AffineParams()), img)


def test_integer_shift_is_exact(rng):
    img = rng.random((20, 30))
    out = warp(img, build_affine_matrix(AffineParams(0, 3, -2)), fill=0.0)
    # output(p) = input(p - t): content moves right by 3 and up by 2 rows
    np.testing.assert_array_equal(out[:18, 3:], img[2:, :27])
    assert np.all(out[:, :3] == 0) and np.all(out[18:] == 0)


def test_half_pixel_shift_averages():
    img = np.zeros((5, 6))
    img[:, 2] = 1.0
    out = warp(img, build_affine_matrix(AffineParams(0, 0.5, 0)))
    np.testing.assert_allclose(out[2, 2:4], [0.5, 0.5])


def test_rotation_sign():
    # positive angle takes +u onto +v (centered coords, v pointing down the rows)
    img = np.zeros((21, 21))
    img[10, 15] = 1.0
    out = warp(img, build_affine_matrix(AffineParams(90, 0, 0)))
    assert out[15, 10] == pytest.approx(1.0)


def test_fill_value():
    img = np.ones((8, 8))
    out = warp(img, build_affine_matrix(AffineParams(0, 20, 0)), fill=0.25)
    assert np.all(out == 0.25)


def test_bilinear_gradient_matches_fd(rng):
    img = rng.random((12, 12))
    xs = rng.uniform(1, 10, 50)
    ys = rng.uniform(1, 10, 50)
    val, gx, gy, inside = bilinear_sample(img, xs, ys, grad=True)
    h = 1e-7
    fx = (bilinear_sample(img, xs + h, ys) - bilinear_sample(img, xs - h, ys)) / (2 * h)
    fy = (bilinear_sample(img, xs, ys + h) - bilinear_sample(img, xs, ys - h)) / (2 * h)
    np.testing.assert_allclose(gx, fx, atol=1e-6)
    np.testing.assert_allclose(gy, fy, atol=1e-6)
    assert inside.all()


def test_degrade_forward_shapes():
    with pytest.raises(DimensionError):
        degrade_forward(np.ones((4, 4)), np.ones((4, 5)), AffineParams())
    with pytest.raises(InvalidParameterError):
        degrade_forward(np.ones((4, 4)), np.full((4, 4), 1.5), AffineParams())
    with pytest.raises(InvalidParameterError):
        degrade_forward(-np.ones((4, 4)), np.ones((4, 4)), AffineParams())


@settings(max_examples=30)
@given(st.floats(0, 1), angles, shifts, shifts)
def test_forward_output_bounded(lam, th, tx, ty):
    img = np.random.default_rng(0).random((16, 16))
    out = degrade_forward(img, np.full((16, 16), lam), AffineParams(th, tx, ty))
    assert out.min() >= 0 and out.max() <= lam * img.max() + 1e-12


def test_matrix_values_small_angle():
    m = build_affine_matrix(AffineParams(5, 5, 5))
    c, s = math.cos(math.radians(5)), math.sin(math.radians(5))
    np.testing.assert_allclose(m, [[c, -s, 5], [s, c, 5]], atol=1e-15)
    np.testing.assert_allclose(m[:, :2], [[0.99619, -0.08716], [0.08716, 0.99619]], atol=5e-6)


def test_translation_inverse():
    m = invert_affine(build_affine_matrix(AffineParams(0, 3, -2)))
    np.testing.assert_allclose(m, [[1, 0, -3], [0, 1, 2]], atol=1e-15)


def test_warp_round_trip_band_limited():
    from scipy import ndimage

    img = ndimage.gaussian_filter(np.random.default_rng(0).random((96, 96)), 3.0)
    m = build_affine_matrix(AffineParams(7, 2.3, -1.6))
    back = warp(warp(img, m), invert_affine(m))
    inner = (slice(12, -12), slice(12, -12))
    assert np.abs(back[inner] - img[inner]).mean() < 0.02


def test_attenuate_examples():
    from stemdegrade.imaging import attenuate

    img = np.full((2, 2), 0.8)
    assert np.array_equal(attenuate(img, np.ones((2, 2))), img)
    assert np.all(attenuate(img, np.zeros((2, 2))) == 0)
    assert attenuate(img, np.full((2, 2), 0.25))[0, 0] == pytest.approx(0.2)
    np.testing.assert_array_equal(degrade_forward(img, np.full((2, 2), 0.5), AffineParams()), 0.4)
