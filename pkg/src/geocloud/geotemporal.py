"""Time series containers, trace ingestion, forecasting and peak-hour detection.

All timestamps are timezone-aware UTC datetimes; periods are whole seconds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    AlignmentError,
    DomainError,
    GridError,
    InsufficientHistoryError,
    ParameterError,
    ParseError,
)

UTC = timezone.utc
HOUR = 3600
DAY = 24 * HOUR

ALPHA_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


def as_utc(t: datetime) -> datetime:
    if t.tzinfo is None:
        raise ParameterError(f"naive timestamp {t.isoformat()}; UTC offset required")
    return t.astimezone(UTC)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return as_utc(datetime.fromisoformat(text))


def make_rng(seed, *keys) -> np.random.Generator:
    """PCG64 generator keyed by ``seed`` plus optional integer sub-keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly spaced samples; index ``i`` sits at ``start + i * period``."""

    start: datetime
    period: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "start", as_utc(self.start))
        if int(self.period) != self.period or self.period <= 0:
            raise GridError(f"period must be a positive whole number of seconds, got {self.period}")
        object.__setattr__(self, "period", int(self.period))
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ParameterError("time series values must be one-dimensional")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (self.start == other.start and self.period == other.period
                and np.array_equal(self.values, other.values))

    __hash__ = None

    @property
    def end(self) -> datetime:
        """Timestamp one period after the last sample (exclusive bound)."""
        return self.start + timedelta(seconds=self.period * len(self))

    def time_at(self, i: int) -> datetime:
        return self.start + timedelta(seconds=self.period * i)

    def timestamps(self) -> list[datetime]:
        return [self.time_at(i) for i in range(len(self))]

    def index_of(self, t: datetime) -> int:
        """Index of the sample whose interval contains ``t`` (step-hold)."""
        offset = (as_utc(t) - self.start).total_seconds()
        i = math.floor(offset / self.period)
        if i < 0 or i >= len(self):
            raise GridError(f"{t.isoformat()} outside series [{self.start.isoformat()}, {self.end.isoformat()})")
        return i

    def value_at(self, t: datetime) -> float:
        return float(self.values[self.index_of(t)])

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.start, self.period, values)

    def slice(self, i: int, j: int) -> "TimeSeries":
        return TimeSeries(self.time_at(i), self.period, self.values[i:j])

    def hours_of_day(self) -> np.ndarray:
        offsets = self.start.hour * HOUR + self.start.minute * 60 + self.start.second
        secs = offsets + self.period * np.arange(len(self))
        return (secs // HOUR) % 24


@dataclass(frozen=True)
class TraceSet:
    locations: tuple
    electricity: Mapping[str, TimeSeries]
    temperature: Mapping[str, TimeSeries]

    def __post_init__(self):
        object.__setattr__(self, "locations", tuple(self.locations))
        ref = None
        for loc in self.locations:
            if loc not in self.electricity or loc not in self.temperature:
                raise AlignmentError(f"location {loc!r} lacks an electricity or temperature series")
            for series in (self.electricity[loc], self.temperature[loc]):
                key = (series.start, series.period, len(series))
                if ref is None:
                    ref = key
                elif key != ref:
                    raise AlignmentError(
                        f"series for {loc!r} starts {series.start.isoformat()} (period {series.period}s, "
                        f"{len(series)} samples); expected start {ref[0].isoformat()}, period {ref[1]}s, {ref[2]} samples")

    @property
    def start(self) -> datetime:
        return self.electricity[self.locations[0]].start

    @property
    def period(self) -> int:
        return self.electricity[self.locations[0]].period

    def __len__(self):
        return len(self.electricity[self.locations[0]])


@dataclass(frozen=True)
class ForecastErrorSpec:
    sigma_pred: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_pred < 0:
            raise ParameterError(f"sigma_pred must be >= 0, got {self.sigma_pred}")


# -- ingestion ---------------------------------------------------------------

def read_trace_csv(path) -> TimeSeries:
    path = Path(path)
    times, values = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["timestamp", "value"]:
            raise ParseError(path, 1, f"expected header 'timestamp,value', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(path, lineno, f"expected 2 columns, got {len(row)}")
            try:
                times.append(parse_timestamp(row[0]))
                values.append(float(row[1]))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    if not times:
        raise ParseError(path, 2, "no data rows")
    if len(times) == 1:
        raise GridError(f"{path}: a single row does not define a grid period")
    period = (times[1] - times[0]).total_seconds()
    if period <= 0 or period != int(period):
        raise GridError(f"{path}: invalid spacing {period}s between first two rows")
    for i in range(1, len(times)):
        step = (times[i] - times[i - 1]).total_seconds()
        if step == period:
            continue
        if step > period and step % period == 0:
            missing = times[i - 1] + timedelta(seconds=period)
            raise GridError(f"{path}: gap in grid, missing {missing.isoformat()}")
        raise GridError(f"{path}: irregular spacing of {step}s before {times[i].isoformat()}")
    return TimeSeries(times[0], int(period), values)


def load_traces(paths: Mapping[str, str | Path], kind: str) -> dict[str, TimeSeries]:
    """Read one CSV per location; all resulting series must share a grid."""
    if kind not in ("electricity", "temperature"):
        raise ParameterError(f"unknown trace kind {kind!r}")
    out = {loc: read_trace_csv(p) for loc, p in paths.items()}
    _check_aligned(out)
    return out


def load_trace_set(electricity: Mapping[str, str | Path], temperature: Mapping[str, str | Path]) -> TraceSet:
    el = load_traces(electricity, "electricity")
    temp = load_traces(temperature, "temperature")
    return TraceSet(tuple(el), el, temp)


def _check_aligned(series: Mapping[str, TimeSeries]):
    items = list(series.items())
    for loc, s in items[1:]:
        ref_loc, ref = items[0]
        if s.start != ref.start or s.period != ref.period:
            raise AlignmentError(
                f"{loc!r} starts {s.start.isoformat()} every {s.period}s but "
                f"{ref_loc!r} starts {ref.start.isoformat()} every {ref.period}s")


def write_trace_csv(series: TimeSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "value"])
        for t, v in zip(series.timestamps(), series.values):
            w.writerow([t.isoformat(), repr(float(v))])


# -- forecasting -------------------------------------------------------------

def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")


def _smooth(x: np.ndarray, alpha: float) -> np.ndarray:
    s = np.empty_like(x)
    s[0] = x[0]
    for t in range(1, len(x)):
        # error-correction form: exact fixed point on constant input
        s[t] = s[t - 1] + alpha * (x[t - 1] - s[t - 1])
    return s


def ses_smooth(series: TimeSeries, alpha: float) -> TimeSeries:
    """Simple exponential smoothing; ``s[t]`` only sees ``x[0..t-1]``."""
    _check_alpha(alpha)
    if len(series) == 0:
        raise ParameterError("cannot smooth an empty series")
    return series.with_values(_smooth(series.values, alpha))


def ses_forecast(series: TimeSeries, alpha: float, horizon: int) -> TimeSeries:
    """Bootstrapped SES forecast continuing the input grid.

    Every step reuses the last observation ``x[T]``:
    ``f[1] = a*x[T] + (1-a)*s[T]`` and ``f[h+1] = a*x[T] + (1-a)*f[h]``.
    """
    _check_alpha(alpha)
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    if len(series) == 0:
        raise ParameterError("cannot forecast an empty series")
    x_last = series.values[-1]
    state = _smooth(series.values, alpha)[-1]
    out = np.empty(horizon)
    for h in range(horizon):
        state = state + alpha * (x_last - state)
        out[h] = state
    return TimeSeries(series.end, series.period, out)


def theta_forecast(series: TimeSeries, alpha: float, drift_sigma: float, seed: int, horizon: int) -> TimeSeries:
    """SES forecast plus a zero-mean Gaussian drift term per step."""
    if drift_sigma < 0:
        raise ParameterError(f"drift_sigma must be >= 0, got {drift_sigma}")
    base = ses_forecast(series, alpha, horizon)
    if drift_sigma == 0:
        return base
    drift = make_rng(seed).normal(0.0, drift_sigma, horizon)
    return base.with_values(base.values + drift)


def fit_alpha(series: TimeSeries, grid: Iterable[float] = ALPHA_GRID) -> float:
    """Grid-search alpha by in-sample one-step-ahead MSE (ties -> smallest alpha)."""
    x = series.values
    if len(x) < 2:
        return 0.5
    best, best_err = None, math.inf
    for alpha in grid:
        err = float(np.mean((_smooth(x, alpha)[1:] - x[1:]) ** 2))
        if err < best_err:
            best, best_err = alpha, err
    return best


def mape(actual: TimeSeries | np.ndarray, forecast: TimeSeries | np.ndarray) -> float:
    a = np.asarray(getattr(actual, "values", actual), dtype=float)
    f = np.asarray(getattr(forecast, "values", forecast), dtype=float)
    if a.shape != f.shape:
        raise ParameterError(f"length mismatch: {len(a)} actual vs {len(f)} forecast values")
    if len(a) == 0:
        raise ParameterError("mape of empty series")
    if np.any(a == 0):
        raise DomainError(f"actual series has zero at index {int(np.argmax(a == 0))}")
    return float(np.mean(np.abs((a - f) / a)))


def perturb_forecast(series: TimeSeries, spec: ForecastErrorSpec, *keys) -> TimeSeries:
    """Replace each value with an independent draw from N(x_t, sigma_pred^2)."""
    if spec.sigma_pred == 0:
        return series
    noise = make_rng(spec.seed, *keys).normal(0.0, spec.sigma_pred, len(series))
    return series.with_values(series.values + noise)


# -- peak hours ----------------------------------------------------------------

def hourly_means(prices: TimeSeries) -> dict[int, float]:
    hours = prices.hours_of_day()
    return {int(h): float(prices.values[hours == h].mean()) for h in np.unique(hours)}


def find_expensive_hours(prices: TimeSeries, downtime_ratio: float) -> frozenset[int]:
    """The ``ceil(downtime_ratio * 24)`` hours of day with the highest mean price.

    Ties are broken towards the lower hour index.
    """
    if not 0 < downtime_ratio <= 1:
        raise ParameterError(f"downtime_ratio must lie in (0, 1], got {downtime_ratio}")
    if len(prices) * prices.period < DAY:
        raise InsufficientHistoryError(
            f"need at least 24 h of prices, got {len(prices) * prices.period / HOUR:g} h")
    n = math.ceil(round(downtime_ratio * 24, 9))
    means = hourly_means(prices)
    if n > len(means):
        raise InsufficientHistoryError(f"only {len(means)} distinct hours of day in the price history")
    ranked = sorted(means, key=lambda h: (-means[h], h))
    return frozenset(ranked[:n])


def is_expensive(t: datetime, expensive: Iterable[int]) -> bool:
    return as_utc(t).hour in expensive


# -- synthetic traces ----------------------------------------------------------

def synthesize_shifted_trace(base: TimeSeries, tz_offset_hours: int, mean_offset: float) -> TimeSeries:
    """Derive a trace for another time zone from ``base``.

    ``tz_offset_hours`` is the target zone's UTC offset minus the base zone's;
    the series is rotated so that local-time patterns line up (a zone one hour
    east sees the same local pattern one hour earlier in UTC).
    """
    shift = tz_offset_hours * HOUR
    if shift % base.period:
        raise GridError(f"offset of {tz_offset_hours} h is not a multiple of the {base.period}s period")
    steps = shift // base.period
    return base.with_values(np.roll(base.values, -steps) + mean_offset)


def synthetic_price_trace(start: datetime, days: int, period: int = HOUR, base: float = 30.0,
                          peak: float = 30.0, peak_hour: float = 15.5, width: float = 2.0,
                          noise_sigma: float = 0.0, seed: int = 0) -> TimeSeries:
    """Daily price profile: flat ``base`` plus a Gaussian bump centred on ``peak_hour``."""
    n = days * DAY // period
    ts = TimeSeries(start, period, np.zeros(n))
    hour = ts.hours_of_day() + ((start.minute * 60 + start.second + period * np.arange(n)) % HOUR) / HOUR
    dist = np.minimum(np.abs(hour - peak_hour), 24 - np.abs(hour - peak_hour))
    values = base + peak * np.exp(-0.5 * (dist / width) ** 2)
    if noise_sigma:
        values = values + make_rng(seed).normal(0.0, noise_sigma, n)
    return ts.with_values(values)


def synthetic_temperature_trace(start: datetime, days: int, period: int = HOUR, mean: float = 15.0,
                                amplitude: float = 5.0, warmest_hour: float = 15.0,
                                noise_sigma: float = 0.0, seed: int = 0) -> TimeSeries:
    n = days * DAY // period
    ts = TimeSeries(start, period, np.zeros(n))
    hour = ts.hours_of_day() + ((start.minute * 60 + start.second + period * np.arange(n)) % HOUR) / HOUR
    values = mean + amplitude * np.cos(2 * np.pi * (hour - warmest_hour) / 24)
    if noise_sigma:
        values = values + make_rng(seed).normal(0.0, noise_sigma, n)
    return ts.with_values(values)
