import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from solarmos.domain import (
    DEFAULT_LEVELS, ForecastCase, QuantileForecast, QuantileLevels, Season, StationMeta, StructuralError,
    ValidationError, sanitize_array, sanitize_quantiles, season_of, season_of_month,
)

LEVELS3 = QuantileLevels((0.25, 0.5, 0.75))


def test_default_grid_has_49_even_levels():
    lv = QuantileLevels()
    assert len(lv) == 49
    assert lv.levels[0] == 0.02 and lv.levels[-1] == 0.98
    assert np.allclose(np.diff(lv.as_array()), 0.02)
    assert lv.levels[lv.median_index()] == 0.5
    assert DEFAULT_LEVELS == lv.levels


@pytest.mark.parametrize("bad", [(), (0.0, 0.5), (0.5, 1.0), (0.5, 0.4), (0.2, 0.2)])
def test_levels_reject_invalid(bad):
    with pytest.raises(ValidationError):
        QuantileLevels(bad)


def test_grid_without_median_is_structural_error():
    with pytest.raises(StructuralError):
        QuantileLevels((0.1, 0.9)).median_index()


@pytest.mark.parametrize("raw, expected", [
    ((0.2, 0.5, 0.8), (0.2, 0.5, 0.8)),
    ((0.5, -0.1, 0.3), (0.0, 0.3, 0.5)),
    ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
])
def test_sanitize_examples(raw, expected):
    assert sanitize_quantiles(raw, LEVELS3).values == expected


def test_sanitize_length_mismatch():
    with pytest.raises(StructuralError):
        sanitize_quantiles((0.1, 0.2), LEVELS3)


def test_forecast_median_and_length():
    f = QuantileForecast((0.1, 0.4, 0.9), LEVELS3)
    assert f.median == 0.4
    with pytest.raises(StructuralError):
        QuantileForecast((0.1,), LEVELS3)


finite = st.floats(-10, 10, allow_nan=False)


@given(arrays(float, st.integers(1, 60), elements=finite))
def test_sanitize_sorted_nonnegative_idempotent(raw):
    once = sanitize_array(raw)
    assert np.all(np.diff(once) >= 0)
    assert np.all(once >= 0)
    assert np.array_equal(sanitize_array(once), once)
    # nonnegative values survive as a multiset
    assert np.array_equal(np.sort(raw[raw > 0]), once[once > 0])


@given(arrays(float, (5, 7), elements=finite))
def test_sanitize_rowwise(raw):
    out = sanitize_array(raw)
    for i in range(raw.shape[0]):
        assert np.array_equal(out[i], sanitize_array(raw[i]))


@pytest.mark.parametrize("ts, season", [
    ("2017-01-15", Season.WINTER), ("2017-03-01", Season.SPRING), ("2016-11-30", Season.AUTUMN),
    ("2016-12-01", Season.WINTER), ("2016-06-30T23:00Z", Season.SUMMER),
])
def test_season_examples(ts, season):
    assert season_of(pd.Timestamp(ts)) is season


def test_every_month_in_exactly_one_season():
    seen = [m for s in Season for m in s.months]
    assert sorted(seen) == list(range(1, 13))
    for m in range(1, 13):
        assert m in season_of_month(m).months


def test_station_meta_validation():
    StationMeta("A", 52.0, 5.0, 1.0, 2.0, 3.0)
    for kwargs in ({"latitude": 91.0}, {"longitude": -181.0}, {"dist_coast_km": -1.0}):
        args = {"station_id": "A", "latitude": 0.0, "longitude": 0.0, **kwargs}
        with pytest.raises(ValidationError):
            StationMeta(**args)
    with pytest.raises(ValidationError):
        StationMeta("", 0.0, 0.0)


def test_forecast_case_rules():
    c = ForecastCase("A", pd.Timestamp("2016-06-01T12:00Z"), 12, {"G": 0.5}, 800.0, 0.4)
    assert c.complete
    assert not ForecastCase("A", pd.Timestamp("2016-06-01T12:00Z"), 12, {"G": float("nan")}, 800.0).complete
    with pytest.raises(StructuralError):
        ForecastCase("A", pd.Timestamp("2016-06-01T12:00Z"), 12, {"BOGUS": 1.0}, 800.0)
    with pytest.raises(ValidationError):
        ForecastCase("A", pd.Timestamp("2016-06-01T12:00Z"), 12, {"G": 0.5}, 800.0, -0.1)
    with pytest.raises(ValidationError):
        ForecastCase("A", pd.Timestamp("2016-06-01T12:00Z"), 12, {"G": 0.5}, -1.0)
    with pytest.raises(TypeError):
        c.predictors["G"] = 1.0
