import math

import numpy as np
import pytest

from fpwhitebox.quality import (
    QualityScore,
    compute_all,
    goq,
    ocl,
    orientation_field,
    quality_by_condition,
    ridge_frequency,
    ridge_frequency_map,
)


def grating(period, size=256, angle=0.0, amp=100.0):
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    u = xx * math.cos(angle) + yy * math.sin(angle)
    return 127.5 + amp * np.sin(2 * math.pi * u / period)


@pytest.mark.parametrize("angle", [0.0, 0.4, math.pi / 2, 2.5])
def test_orientation_of_grating(angle):
    f = orientation_field(grating(10, angle=angle))
    # intensity varies along `angle`, so ridges run perpendicular to it
    want = (angle + math.pi / 2) % math.pi
    d = np.abs(f.orientation[f.foreground] - want)
    assert np.all(np.minimum(d, math.pi - d) < 0.02)
    assert np.all(f.coherence[f.foreground] > 0.95)


@pytest.mark.parametrize("period", [4.0, 7.0, 12.0, 20.0])
def test_frequency_estimate(period):
    freq, fg = ridge_frequency_map(grating(period, angle=0.7))
    est = freq[fg & (freq > 0)]
    assert est.size >= 0.9 * fg.sum()
    assert np.all(np.abs(est * period - 1) < 0.1)


def test_rf_outside_band():
    assert ridge_frequency(grating(40)).value == 0.0
    assert ridge_frequency(grating(60)).value <= 0.05
    assert ridge_frequency(grating(9)).value == 1.0


def test_constant_image_scores_zero():
    img = np.full((100, 100), 77.0)
    assert compute_all(img) == {"GOQ": 0.0, "RF": 0.0, "OCL": 0.0}


def test_noise_is_poor():
    noise = np.random.default_rng(0).integers(0, 256, size=(256, 256))
    s = compute_all(noise)
    assert s["OCL"] < 0.3 and s["RF"] < 0.5 and s["GOQ"] < 0.8


def test_checkerboard_goq():
    # quadrants alternate between horizontal and vertical ridges; diagonal
    # neighbours share orientation, so the score sits near one half
    img = np.zeros((256, 256))
    for by in range(8):
        for bx in range(8):
            ang = 0.0 if (bx + by) % 2 == 0 else math.pi / 2
            img[by * 32:(by + 1) * 32, bx * 32:(bx + 1) * 32] = grating(8, 32, ang)
    v = goq(img).value
    assert 0.45 <= v <= 0.55


def test_shift_invariance():
    img = grating(9, angle=1.1, amp=80) + np.random.default_rng(1).normal(0, 5, (256, 256))
    a, b = compute_all(img), compute_all(img + 10)
    for k in a:
        assert abs(a[k] - b[k]) <= 1e-9


def test_goq_smooth_field_high():
    yy, xx = np.mgrid[0:256, 0:256].astype(float)
    img = 128 + 100 * np.sin(2 * math.pi * np.hypot(xx + 300, yy + 300) / 9)
    assert goq(img).value > 0.9


def test_validation():
    with pytest.raises(ValueError):
        orientation_field(np.zeros((10, 10)), block=4)
    with pytest.raises(ValueError):
        ocl(np.zeros((0, 5)))
    with pytest.raises(ValueError):
        QualityScore("OCL", 1.2)


def test_quality_by_condition(caplog):
    entries = [
        ("optical", "Normal", {"OCL": 0.9}),
        ("optical", "Dry finger", {"OCL": 0.5}),
        ("optical", None, {"OCL": 0.1}),
    ]
    d = quality_by_condition(entries)
    assert d.by_condition[("optical", "DryFinger", "OCL")] == [0.5]
    assert d.pooled[("optical", "OCL")] == [0.9, 0.5]
    assert d.skipped == 1 and "no capture condition" in caplog.text


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rotation_by_90_degrees(seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:256, 0:256].astype(float)
    a, b = rng.uniform(0.03, 0.08, size=2)
    img = 128 + 100 * np.sin(2 * math.pi * np.hypot(xx - 128 + 400 * a, yy - 128 + 400 * b) / 9)
    img += rng.normal(0, 10, img.shape)
    rot = np.rot90(img)
    assert abs(ocl(img).value - ocl(rot).value) <= 0.05
    assert abs(goq(img).value - goq(rot).value) <= 0.05
