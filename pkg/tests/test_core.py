import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fpwhitebox.core import (
    ADVERSE_CONDITIONS,
    CONDITION_FAMILIES,
    CaptureCondition,
    ConditionMetadata,
    DataError,
    GrayscaleImage,
    Minutia,
    MinutiaeSet,
    wrap_angle,
    wrap_angles,
)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_wrap_angle_range(t):
    w = wrap_angle(t)
    assert 0.0 <= w < 2 * math.pi
    assert math.isclose(math.cos(w), math.cos(t), abs_tol=1e-6)


def test_wrap_angle_edges():
    assert wrap_angle(2 * math.pi) == 0.0
    assert wrap_angle(-1e-300) == 0.0
    assert wrap_angle(-math.pi / 2) == pytest.approx(1.5 * math.pi)
    with pytest.raises(ValueError):
        wrap_angle(float("nan"))


def test_wrap_angles_matches_scalar():
    t = np.array([-7.0, -0.0, 0.0, 3.0, 6.5, 100.0])
    w = wrap_angles(t)
    assert np.all((w >= 0) & (w < 2 * math.pi))
    np.testing.assert_allclose(w, [wrap_angle(v) for v in t], atol=1e-12)


def test_minutia_validation():
    assert Minutia(1, 2, -math.pi / 2).theta == pytest.approx(1.5 * math.pi)
    with pytest.raises(ValueError):
        Minutia(float("inf"), 0, 0)
    with pytest.raises(ValueError):
        Minutia(0, 0, 0, quality=1.5)


def test_minutiae_set_bounds():
    with pytest.raises(DataError):
        MinutiaeSet.from_arrays([10], [5], [0], 10, 10)
    s = MinutiaeSet.from_arrays([10, 3], [5, 3], [0, 0], 10, 10, strict=False)
    assert s.out_of_bounds.tolist() == [True, False]
    with pytest.raises(ValueError):
        MinutiaeSet((), 0, 10)


def test_minutiae_set_arrays_and_equality():
    s = MinutiaeSet.from_arrays([1, 2], [3, 4], [0.5, 1.0], 20, 30)
    assert s.shape == (20, 30)
    assert s.xy.tolist() == [[1, 3], [2, 4]]
    assert s.theta.tolist() == [0.5, 1.0]
    assert s == s.replace(list(s), strict=False)  # strictness does not affect equality
    assert MinutiaeSet((), 5, 5).xy.shape == (0, 2)


def test_grayscale_image_read_only():
    img = GrayscaleImage.from_buffer(range(6), 3, 2)
    assert (img.width, img.height) == (3, 2)
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1
    with pytest.raises(ValueError):
        GrayscaleImage.from_buffer([1, 2, 3], 2, 2)


def test_capture_conditions():
    assert CaptureCondition.parse("dry finger") is CaptureCondition.DRY_FINGER
    assert CaptureCondition.parse("LOW_PRESSURE") is CaptureCondition.LOW_PRESSURE
    assert CaptureCondition.parse("Normal") is CaptureCondition.NORMAL
    with pytest.raises(DataError):
        CaptureCondition.parse("Sweaty")
    assert len(ADVERSE_CONDITIONS) == 6
    assert sorted(c for fam in CONDITION_FAMILIES.values() for c in fam) == sorted(ADVERSE_CONDITIONS)


def test_condition_metadata_positive():
    ConditionMetadata(illumination_lux=300.0)
    with pytest.raises(DataError):
        ConditionMetadata(pressure_kpa=0.0)


@given(st.floats(-1e9, 1e9, allow_nan=False))
def test_wrap_angle_idempotent(t):
    w = wrap_angle(t)
    assert wrap_angle(w) == w
