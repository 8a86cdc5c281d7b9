import math
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geocloud.errors import (AlignmentError, DomainError, GridError, InsufficientHistoryError, ParameterError,
                             ParseError)
from geocloud.geotemporal import (UTC, ForecastErrorSpec, TimeSeries, TraceSet, find_expensive_hours, fit_alpha,
                                  hourly_means, is_expensive, load_traces, mape, perturb_forecast, read_trace_csv,
                                  ses_forecast, ses_smooth, synthesize_shifted_trace, synthetic_price_trace,
                                  theta_forecast, write_trace_csv)

T0 = datetime(2024, 3, 1, tzinfo=UTC)
KRAKOW = TimeSeries(T0, 3600, [31, 32, 26, 26])


def hourly(values, start=T0):
    return TimeSeries(start, 3600, values)


def write_csv(path, rows, header="timestamp,value"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


# -- ingestion ------------------------------------------------------------------

def test_read_24_hourly_rows(tmp_path):
    rows = [f"{(T0 + timedelta(hours=i)).isoformat()},{i}" for i in range(24)]
    ts = read_trace_csv(write_csv(tmp_path / "p.csv", rows))
    assert ts.period == 3600 and len(ts) == 24
    assert ts.values[5] == 5.0


def test_missing_hour_names_timestamp(tmp_path):
    rows = [f"{(T0 + timedelta(hours=i)).isoformat()},{i}" for i in range(24) if i != 7]
    with pytest.raises(GridError, match="2024-03-01T07:00:00"):
        read_trace_csv(write_csv(tmp_path / "p.csv", rows))


def test_malformed_row_reports_line(tmp_path):
    rows = [f"{T0.isoformat()},1", f"{(T0 + timedelta(hours=1)).isoformat()},abc"]
    with pytest.raises(ParseError) as err:
        read_trace_csv(write_csv(tmp_path / "p.csv", rows))
    assert err.value.line == 3


def test_utc_z_suffix_and_roundtrip(tmp_path):
    rows = ["2024-03-01T00:00:00Z,1.5", "2024-03-01T01:00:00Z,2.5"]
    ts = read_trace_csv(write_csv(tmp_path / "p.csv", rows))
    assert ts.start == T0
    write_trace_csv(ts, tmp_path / "q.csv")
    assert read_trace_csv(tmp_path / "q.csv") == ts


def test_mismatched_starts_raise_alignment(tmp_path):
    a = write_csv(tmp_path / "a.csv", [f"{(T0 + timedelta(hours=i)).isoformat()},1" for i in range(3)])
    b = write_csv(tmp_path / "b.csv", [f"{(T0 + timedelta(hours=i + 1)).isoformat()},1" for i in range(3)])
    with pytest.raises(AlignmentError):
        load_traces({"a": a, "b": b}, "electricity")


def test_traceset_rejects_misaligned():
    with pytest.raises(AlignmentError):
        TraceSet(("a",), {"a": hourly([1, 2])}, {"a": hourly([1, 2], T0 + timedelta(hours=1))})


def test_step_hold_lookup():
    ts = hourly([1.0, 2.0])
    assert ts.value_at(T0 + timedelta(minutes=59)) == 1.0
    with pytest.raises(GridError):
        ts.value_at(T0 + timedelta(hours=2))


# -- SES and Theta ------------------------------------------------------------------

def test_ses_krakow_oracle():
    s = ses_smooth(KRAKOW, 0.5)
    np.testing.assert_allclose(s.values, [31, 31, 31.5, 28.75])


def test_ses_forecast_krakow():
    f = ses_forecast(KRAKOW, 0.5, 3)
    np.testing.assert_allclose(f.values, [27.375, 26.6875, 26.34375])
    assert f.start == KRAKOW.end


@pytest.mark.parametrize("alpha", [0.05, 0.5, 0.95])
def test_ses_constant_is_fixed_point(alpha):
    c = hourly([7.25] * 4)
    assert np.array_equal(ses_smooth(c, alpha).values, c.values)
    assert np.array_equal(ses_forecast(c, alpha, 3).values, [7.25] * 3)


def test_ses_length_one():
    one = hourly([3.0])
    assert ses_smooth(one, 0.3) == one


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
def test_ses_alpha_bounds(alpha):
    with pytest.raises(ParameterError):
        ses_smooth(KRAKOW, alpha)


def test_ses_forecast_monotone_toward_last():
    f = ses_forecast(KRAKOW, 0.3, 30).values
    gaps = np.abs(f - 26.0)
    assert np.all(np.diff(gaps) <= 0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40), st.floats(0.01, 0.99))
def test_ses_causal(xs, alpha):
    full = ses_smooth(hourly(xs), alpha).values
    for t in range(1, len(xs)):
        trunc = ses_smooth(hourly(xs[:t]), alpha).values
        assert full[t - 1] == trunc[t - 1]
    # s[t] does not depend on x[t]
    changed = list(xs)
    changed[-1] += 100.0
    assert ses_smooth(hourly(changed), alpha).values[-1] == full[-1]


def test_theta_zero_drift_equals_ses():
    assert theta_forecast(KRAKOW, 0.5, 0.0, 1, 5) == ses_forecast(KRAKOW, 0.5, 5)


def test_theta_seeded_and_zero_mean():
    a = theta_forecast(KRAKOW, 0.5, 1.0, 42, 1000)
    assert a == theta_forecast(KRAKOW, 0.5, 1.0, 42, 1000)
    diff = a.values - ses_forecast(KRAKOW, 0.5, 1000).values
    assert abs(diff.mean()) < 0.1


def test_fit_alpha_picks_grid_value():
    rng = np.random.default_rng(0)
    alpha = fit_alpha(hourly(np.cumsum(rng.normal(size=200))))
    assert alpha == pytest.approx(0.95)  # random walk: last value is the best predictor


# -- MAPE and perturbation ---------------------------------------------------------------

def test_mape_values():
    assert mape(hourly([100, 100]), hourly([110, 90])) == pytest.approx(0.10)
    assert mape(KRAKOW, KRAKOW) == 0.0


def test_mape_zero_actual():
    with pytest.raises(DomainError):
        mape(hourly([0, 1]), hourly([1, 1]))


def test_perturb_sigma_zero_identity():
    assert perturb_forecast(KRAKOW, ForecastErrorSpec(0.0, 3)) == KRAKOW


def test_perturb_statistics_and_determinism():
    base = hourly(np.zeros(10000))
    spec = ForecastErrorSpec(3.0, 11)
    out = perturb_forecast(base, spec)
    assert abs(np.std(out.values) - 3.0) < 0.05 * 3.0
    assert perturb_forecast(base, spec) == out
    assert perturb_forecast(base, spec, 1) != out


# -- expensive hours ----------------------------------------------------------------------

def test_expensive_ratio_016_gives_four():
    prices = synthetic_price_trace(T0, 7)
    assert len(find_expensive_hours(prices, 0.16)) == 4


def test_expensive_doubled_afternoon():
    vals = np.tile(np.full(24, 30.0), 3)
    for d in range(3):
        vals[d * 24 + 13:d * 24 + 17] *= 2
    assert find_expensive_hours(hourly(vals), 0.16) == {13, 14, 15, 16}


def test_expensive_constant_tie_break():
    assert find_expensive_hours(hourly(np.full(48, 5.0)), 4 / 24) == {0, 1, 2, 3}


def test_expensive_needs_a_day():
    with pytest.raises(InsufficientHistoryError):
        find_expensive_hours(hourly(np.ones(23)), 0.16)


@given(st.floats(0.001, 1.0))
def test_expensive_size(ratio):
    prices = synthetic_price_trace(T0, 2, noise_sigma=1.0, seed=5)
    assert len(find_expensive_hours(prices, ratio)) == math.ceil(round(ratio * 24, 9))


@settings(max_examples=30)
@given(st.integers(0, 23), st.integers(0, 2**31 - 1))
def test_dominant_hour_always_selected(hour, seed):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(10, 20, 72)
    vals[hour::24] = 100
    prices = hourly(vals)
    means = hourly_means(prices)
    assert max(means, key=means.get) == hour
    assert hour in find_expensive_hours(prices, 1 / 24)


@settings(max_examples=30)
@given(st.permutations(list(range(24))))
def test_tie_break_independent_of_layout(perm):
    vals = np.zeros(24)
    for rank, h in enumerate(perm):
        vals[h] = 10.0 if rank < 8 else 1.0  # eight tied maxima
    chosen = find_expensive_hours(hourly(vals), 4 / 24)
    assert chosen == set(sorted(perm[:8])[:4])


def test_is_expensive():
    t15 = T0.replace(hour=15)
    assert is_expensive(t15, {13, 14, 15, 16})
    assert not is_expensive(t15, set())
    assert is_expensive(T0, {0})


# -- shifting -------------------------------------------------------------------------------

def test_shift_identity_and_rotation():
    base = hourly(np.arange(24.0))
    assert synthesize_shifted_trace(base, 0, 0.0) == base
    shifted = synthesize_shifted_trace(base, 1, 0.0)
    assert shifted.values[0] == 1.0 and shifted.values[-1] == 0.0
    assert synthesize_shifted_trace(base, 0, 10.0).values.mean() == pytest.approx(base.values.mean() + 10)


def test_shift_not_divisible():
    with pytest.raises(GridError):
        synthesize_shifted_trace(TimeSeries(T0, 7200, np.arange(12.0)), 1, 0.0)
