import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stemdegrade.errors import DegenerateInputError, DimensionError, OutOfRangeError
from stemdegrade.imaging import AffineParams
from stemdegrade.metrics import (
    damage_intensity,
    drift_error,
    gaussian_kernel1d,
    mean_report,
    profile_lag,
    regression_report,
    rotation_error,
    side_profile,
    smooth1d,
)


def test_damage_intensity():
    assert damage_intensity(np.ones((3, 3))) == 0.0
    assert damage_intensity(np.full((3, 3), 0.25)) == pytest.approx(0.75)


def test_perfect_prediction():
    gt = np.linspace(0, 0.9, 10)
    r = regression_report(gt, gt)
    assert (r.mae, r.mse, r.rmse, r.r2, r.var_err) == (0, 0, 0, 1, 0)


def test_report_hand_values():
    gt = np.array([0.0, 1.0, 2.0, 3.0])
    pred = gt + np.array([0.1, -0.1, 0.1, -0.1])
    r = regression_report(pred, gt)
    assert r.mae == pytest.approx(0.1)
    assert r.mse == pytest.approx(0.01)
    assert r.rmse == pytest.approx(0.1)
    assert r.r2 == pytest.approx(1 - 0.04 / 5.0)
    assert r.var_err == pytest.approx(0.04 / 3)


def test_constant_bias_has_zero_variance():
    gt = np.linspace(0, 1, 5)
    assert regression_report(gt + 0.2, gt).var_err == pytest.approx(0.0, abs=1e-15)


def test_report_errors():
    with pytest.raises(DegenerateInputError):
        regression_report([1, 2], [3, 3])
    with pytest.raises(DimensionError):
        regression_report([1, 2, 3], [1, 2])


def test_mean_report():
    gt = np.arange(4.0)
    a = regression_report(gt + 1, gt)
    b = regression_report(gt, gt)
    m = mean_report([a, b])
    assert m.mae == pytest.approx(0.5) and m.r2 == pytest.approx((a.r2 + 1) / 2)


def test_drift_and_rotation_error():
    assert drift_error(AffineParams(0, 1, 2), AffineParams(5, -1, 4)) == 4
    assert rotation_error(AffineParams(179, 0, 0), AffineParams(-179, 0, 0)) == pytest.approx(2)


@given(st.floats(0.1, 5))
def test_kernel_normalized(sigma):
    k = gaussian_kernel1d(sigma)
    assert k.sum() == pytest.approx(1.0) and len(k) == 2 * int(np.ceil(3 * sigma)) + 1


def test_smooth_preserves_constants():
    np.testing.assert_allclose(smooth1d(np.full(20, 3.0), 2.0), 3.0)
    x = np.arange(10.0)
    assert np.array_equal(smooth1d(x, 0), x)


def test_profile_lag_sign():
    x = np.zeros(50)
    x[20] = 1
    assert profile_lag(x, np.roll(x, 3)) == 3
    assert profile_lag(x, np.roll(x, -4)) == -4


def test_side_profile(lattice64):
    a, b = side_profile(lattice64, lattice64, 10)
    assert np.array_equal(a, b) and a.shape == (64,)
    with pytest.raises(OutOfRangeError):
        side_profile(lattice64, lattice64, 64)
