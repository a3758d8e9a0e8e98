from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.color import lab2rgb, rgb2lab

from tonemeter.color import (
    DEFAULT_ITA_BANDS,
    LabColor,
    ThresholdConfig,
    delta_e_1976,
    ita,
    ita_to_fitzpatrick,
    lab_to_srgb,
    mean_lab,
    srgb_to_lab,
)


@pytest.mark.parametrize(
    "lab, expected",
    [((50, 0, 17), 0.0), ((70, 5, 20), 45.0), ((30, 8, 20), -45.0)],
)
def test_ita_reference_cases(lab, expected):
    assert ita(lab) == pytest.approx(expected, abs=1e-9)


def test_ita_on_b_zero_axis():
    assert ita((60, 0, 0)) == 90.0
    assert ita((40, 0, 0)) == -90.0
    assert ita((50, 0, 0)) == 0.0


def test_ita_negative_b_stays_in_range():
    # arctan of the ratio, not atan2, for b* < 0
    assert ita((60, 0, -10)) == pytest.approx(-45.0)
    assert ita((40, 0, -10)) == pytest.approx(45.0)


def test_lab_color_property_matches_function():
    c = LabColor(65.0, 3.0, 18.0)
    assert c.ita == ita(c)
    assert c.ita == pytest.approx(math.degrees(math.atan(15 / 18)))


def test_ita_vectorized_matches_scalar(rng):
    labs = np.column_stack([rng.uniform(0, 100, 50), rng.uniform(-20, 20, 50), rng.uniform(-30, 40, 50)])
    vec = ita(labs)
    assert vec.shape == (50,)
    assert np.array_equal(vec, [ita(row) for row in labs])


@given(
    st.floats(0, 100), st.floats(-128, 127), st.floats(-128, 127), st.floats(-128, 127)
)
def test_ita_ignores_a_star(L, a1, a2, b):
    assert ita((L, a1, b)) == ita((L, a2, b))


@given(st.floats(0.0, 99.0), st.floats(0.01, 1.0), st.floats(1e-3, 100.0))
def test_ita_increases_with_lightness(L, dL, b):
    assert ita((L + dL, 0.0, b)) > ita((L, 0.0, b))


@pytest.mark.parametrize(
    "x, y, expected",
    [((10, 20, 30), (10, 20, 30), 0.0), ((0, 0, 0), (3, 4, 0), 5.0), ((50, 10, 20), (60, 10, 20), 10.0)],
)
def test_delta_e_examples(x, y, expected):
    assert delta_e_1976(x, y) == pytest.approx(expected, abs=1e-12)


lab_values = st.tuples(st.floats(0, 100), st.floats(-128, 127), st.floats(-128, 127))


@given(lab_values, lab_values, lab_values)
def test_delta_e_is_a_metric(x, y, z):
    assert delta_e_1976(x, x) == 0.0
    assert delta_e_1976(x, y) == delta_e_1976(y, x)
    assert delta_e_1976(x, z) <= delta_e_1976(x, y) + delta_e_1976(y, z) + 1e-12


def test_reference_white_and_black():
    white = srgb_to_lab((1.0, 1.0, 1.0))
    assert white == pytest.approx((100.0, 0.0, 0.0), abs=1e-3)
    assert srgb_to_lab((0.0, 0.0, 0.0)) == (0.0, 0.0, 0.0)
    rgb, clamped = lab_to_srgb((100.0, 0.0, 0.0))
    assert not clamped
    assert [round(c * 255) for c in rgb] == [255, 255, 255]


def test_round_trip_in_gamut(rng):
    rgb = rng.uniform(0, 1, (1000, 3))
    back, clamped = lab_to_srgb(srgb_to_lab(rgb))
    assert not clamped.any()
    assert np.abs(back - rgb).max() < 1e-4


def test_matches_independent_implementation(rng):
    # scikit-image uses a slightly different rounding of the D65 white point
    rgb = rng.uniform(0, 1, (500, 3))
    ours = srgb_to_lab(rgb)
    theirs = rgb2lab(rgb[None], illuminant="D65", observer="2")[0]
    assert np.abs(ours - theirs).max() < 0.02
    labs = ours[:50]
    back, _ = lab_to_srgb(labs)
    assert np.abs(back - lab2rgb(labs[None])[0]).max() < 1e-3


def test_out_of_gamut_is_clamped_and_flagged():
    rgb, clamped = lab_to_srgb((50.0, 80.0, 80.0))
    assert clamped
    assert all(0.0 <= c <= 1.0 for c in rgb)
    rgbs, flags = lab_to_srgb(np.array([[50.0, 80.0, 80.0], [50.0, 0.0, 0.0]]))
    assert flags.tolist() == [True, False]
    assert rgbs.shape == (2, 3)


def test_array_shapes_preserved(rng):
    img = rng.uniform(0, 1, (4, 5, 3))
    assert srgb_to_lab(img).shape == (4, 5, 3)
    with pytest.raises(ValueError):
        srgb_to_lab(np.zeros((4, 2)))


def test_mean_lab_exact_for_identical_rows():
    row = np.array([63.123456789, 7.77, 14.1])
    assert np.array_equal(mean_lab(np.tile(row, (37, 1))), row)


@pytest.mark.parametrize("value, band", [(90.0, 1), (-90.0, 6), (30.0, 3), (55.0, 2), (55.0001, 1), (-30.0, 6), (0.0, 5)])
def test_ita_bands_default(value, band):
    assert ita_to_fitzpatrick(value) == band


def test_ita_bands_configurable_and_vectorized():
    bands = ThresholdConfig((50, 40, 30, 20, 10))
    assert ita_to_fitzpatrick(np.array([60.0, 35.0, 0.0]), bands).tolist() == [1, 3, 6]
    assert ita_to_fitzpatrick(np.array([60.0]), DEFAULT_ITA_BANDS).tolist() == [1]


@pytest.mark.parametrize("bad", [(55, 41, 28, 10), (55, 41, 41, 10, -30), (10, 20, 30, 40, 50), (55, 41, float("nan"), 10, -30)])
def test_threshold_config_rejects_invalid(bad):
    with pytest.raises(ValueError):
        ThresholdConfig(bad)


@settings(max_examples=200)
@given(st.floats(-90, 90), st.floats(-90, 90))
def test_ita_bands_monotone(x, y):
    lo, hi = sorted((x, y))
    assert ita_to_fitzpatrick(lo) >= ita_to_fitzpatrick(hi)
