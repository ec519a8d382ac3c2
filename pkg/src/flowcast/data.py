"""Dataset ingestion, normalization, windowing and synthetic data generation.

All flow values travel as float64 arrays shaped [time, node] (raw) or
[time, node, channel] (model-facing). Timestamps are pandas DatetimeIndex
at a fixed hourly-scale interval.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd


class DataError(ValueError):
    """Raised when an input file or array violates the data contract."""


# Legal-holiday date ranges (inclusive) used by default for the holiday mask.
DEFAULT_HOLIDAY_RANGES: tuple[tuple[str, str], ...] = (
    ("2023-01-21", "2023-01-27"),  # Spring Festival
    ("2023-04-29", "2023-05-03"),  # Labor Day
    ("2023-06-22", "2023-06-24"),  # Dragon Boat Festival
    ("2023-09-29", "2023-10-06"),  # National Day
    ("2023-12-30", "2024-01-01"),  # New Year's Day
)

DEFAULT_WEATHER_VOCAB: tuple[str, ...] = (
    "clear", "cloudy", "overcast", "rain", "storm", "fog",
)

FACTOR_COLUMNS = (
    "hour", "temperature", "wind_speed", "humidity", "visibility",
    "weather", "holiday",
)


@dataclass
class RawDataset:
    """Wall-clock timestamps plus a [T, N] matrix of non-negative flows."""

    timestamps: pd.DatetimeIndex
    values: np.ndarray
    node_names: list[str]
    interval_hours: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be [T, N], got shape {self.values.shape}")
        t, n = self.values.shape
        if t < 2 or n < 1:
            raise DataError(f"need T >= 2 and N >= 1, got T={t}, N={n}")
        if len(self.timestamps) != t:
            raise DataError("timestamp count does not match value rows")
        if len(self.node_names) != n:
            raise DataError("node name count does not match value columns")
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(
                f"non-finite value at row {bad[0]}, column {self.node_names[bad[1]]}"
            )
        deltas = np.diff(self.timestamps.asi8)
        if len(deltas) and deltas.min() <= 0:
            row = int(np.argmax(deltas <= 0)) + 1
            raise DataError(f"timestamps not strictly increasing at row {row}")
        if len(deltas) and deltas.max() != deltas.min():
            row = int(np.argmax(deltas != deltas[0])) + 1
            raise DataError(f"timestamp spacing changes at row {row}")

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]


@dataclass
class NormalizationStats:
    """Per-node min/max fitted on the training split."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if self.minimum.shape != self.maximum.shape:
            raise DataError("min/max shapes differ")
        if np.any(self.maximum < self.minimum):
            raise DataError("max < min for some node")

    @property
    def spread(self) -> np.ndarray:
        return self.maximum - self.minimum


@dataclass
class ExternalFactorRecord:
    """One time step of external context."""

    hour: int
    temperature: float
    wind_speed: float
    humidity: float
    visibility: float
    weather: str
    holiday: bool

    def __post_init__(self):
        if not 0 <= int(self.hour) <= 23:
            raise DataError(f"hour {self.hour} outside 0-23")


@dataclass
class ExternalStats:
    """Min/max of the continuous factor columns, fitted on the training split."""

    minimum: np.ndarray  # temperature, wind_speed, humidity, visibility
    maximum: np.ndarray


@dataclass
class PeriodMasks:
    """Boolean per-step masks for the rate-sensitive evaluation periods."""

    evening: np.ndarray
    weekend: np.ndarray
    holiday: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"evening": self.evening, "weekend": self.weekend,
                "holiday": self.holiday}


def load_flow_csv(path) -> RawDataset:
    """Read a flow CSV: `timestamp` column plus one column per node.

    Rejects missing cells, unparsable numbers, non-monotone timestamps and
    irregular spacing, naming the offending row/column.
    """
    try:
        frame = pd.read_csv(path)
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: malformed CSV ({exc})") from exc
    if frame.shape[1] < 2 or frame.columns[0] != "timestamp":
        raise DataError(f"{path}: first column must be 'timestamp' plus node columns")
    node_names = list(frame.columns[1:])
    try:
        stamps = pd.DatetimeIndex(pd.to_datetime(frame["timestamp"], format="ISO8601"))
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: unparsable timestamp ({exc})") from exc
    values = np.empty((len(frame), len(node_names)), dtype=np.float64)
    for j, name in enumerate(node_names):
        col = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=np.float64)
        if np.any(~np.isfinite(col)):
            row = int(np.argmax(~np.isfinite(col)))
            raise DataError(f"{path}: missing or non-numeric cell at row {row}, column {name}")
        values[:, j] = col
    if len(stamps) < 2:
        raise DataError(f"{path}: need at least 2 rows")
    deltas = np.diff(stamps.asi8)
    if deltas.min() <= 0:
        row = int(np.argmax(deltas <= 0)) + 1
        raise DataError(f"{path}: timestamps not strictly increasing at row {row}")
    if deltas.max() != deltas.min():
        row = int(np.argmax(deltas != deltas[0])) + 1
        raise DataError(f"{path}: timestamp spacing changes at row {row}")
    interval_hours = float(deltas[0]) / 3.6e12
    return RawDataset(stamps, values, node_names, interval_hours)


def write_flow_csv(path, ds: RawDataset) -> None:
    frame = pd.DataFrame(ds.values, columns=ds.node_names)
    frame.insert(0, "timestamp", ds.timestamps.strftime("%Y-%m-%dT%H:%M:%S"))
    frame.to_csv(path, index=False)


def load_factors_csv(path) -> list[ExternalFactorRecord]:
    """Read an external-factor CSV with the canonical column set."""
    frame = pd.read_csv(path)
    expected = ("timestamp",) + FACTOR_COLUMNS
    missing = [c for c in expected if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing factor columns {missing}")
    records = []
    for i, row in frame.iterrows():
        try:
            records.append(ExternalFactorRecord(
                hour=int(row["hour"]),
                temperature=float(row["temperature"]),
                wind_speed=float(row["wind_speed"]),
                humidity=float(row["humidity"]),
                visibility=float(row["visibility"]),
                weather=str(row["weather"]),
                holiday=_parse_bool(row["holiday"]),
            ))
        except (ValueError, DataError) as exc:
            raise DataError(f"{path}: bad factor row {i} ({exc})") from exc
    return records


def write_factors_csv(path, timestamps: pd.DatetimeIndex,
                      records: list[ExternalFactorRecord]) -> None:
    frame = pd.DataFrame({
        "timestamp": timestamps.strftime("%Y-%m-%dT%H:%M:%S"),
        "hour": [r.hour for r in records],
        "temperature": [r.temperature for r in records],
        "wind_speed": [r.wind_speed for r in records],
        "humidity": [r.humidity for r in records],
        "visibility": [r.visibility for r in records],
        "weather": [r.weather for r in records],
        "holiday": [int(r.holiday) for r in records],
    })
    frame.to_csv(path, index=False)


def _parse_bool(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in {"1", "true", "t", "yes"}
    return bool(int(value))


def minmax_normalize(values: np.ndarray,
                     stats: NormalizationStats | None = None
                     ) -> tuple[np.ndarray, NormalizationStats]:
    """Scale each node to [0, 1]; fit per-node min/max unless stats given.

    A degenerate node (max == min) maps to all zeros and emits a warning so
    short synthetic splits keep flowing.
    """
    values = np.asarray(values, dtype=np.float64)
    flat = values.reshape(values.shape[0], -1) if values.ndim == 2 else values[..., 0]
    if stats is None:
        stats = NormalizationStats(flat.min(axis=0), flat.max(axis=0))
    spread = stats.spread.copy()
    degenerate = spread == 0
    if np.any(degenerate):
        warnings.warn(
            f"degenerate nodes (max == min) at columns {np.where(degenerate)[0].tolist()}; "
            "mapped to zeros", RuntimeWarning, stacklevel=2)
        spread[degenerate] = 1.0
    out = (flat - stats.minimum) / spread
    out[:, degenerate] = 0.0
    return out.reshape(values.shape), stats


def denormalize(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Exact inverse of minmax_normalize for non-degenerate nodes."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 3:
        return values * stats.spread[None, :, None] + stats.minimum[None, :, None]
    return values * stats.spread + stats.minimum


def make_windows(num_steps: int, history: int, horizon: int,
                 stride: int = 1) -> np.ndarray:
    """Start indices of all (history, horizon) window pairs over a span.

    Window i covers input steps [s, s+history) and target steps
    [s+history, s+history+horizon) with s = i*stride; the target never
    overlaps the input.
    """
    if history < 1 or horizon < 1 or stride < 1:
        raise DataError("history, horizon and stride must be >= 1")
    if history + horizon > num_steps:
        raise DataError(
            f"history+horizon = {history + horizon} exceeds span length {num_steps}")
    count = (num_steps - history - horizon) // stride + 1
    return np.arange(count) * stride


def window_pairs(x: np.ndarray, history: int, horizon: int, stride: int = 1):
    """Yield (X, Y) array pairs for every window over the leading time axis."""
    for s in make_windows(x.shape[0], history, horizon, stride):
        yield x[s:s + history], x[s + history:s + history + horizon]


def build_period_masks(timestamps: pd.DatetimeIndex,
                       holiday_ranges=DEFAULT_HOLIDAY_RANGES,
                       holiday_flags: np.ndarray | None = None) -> PeriodMasks:
    """Evening (17:00-20:00 inclusive), weekend and holiday masks per step.

    The holiday mask comes from explicit per-step flags when provided
    (synthetic data carries its own schedule), else from the configured
    inclusive date ranges.
    """
    hours = timestamps.hour.to_numpy()
    evening = (hours >= 17) & (hours <= 20)
    weekend = timestamps.dayofweek.to_numpy() >= 5
    if holiday_flags is not None:
        holiday = np.asarray(holiday_flags, dtype=bool)
        if holiday.shape[0] != len(timestamps):
            raise DataError("holiday flag length does not match timestamps")
    else:
        dates = timestamps.normalize()
        holiday = np.zeros(len(timestamps), dtype=bool)
        for start, end in holiday_ranges:
            lo = pd.Timestamp(start)
            hi = pd.Timestamp(end)
            holiday |= (dates >= lo) & (dates <= hi)
    return PeriodMasks(evening=evening, weekend=weekend, holiday=np.asarray(holiday))


def encode_external(records: list[ExternalFactorRecord],
                    stats: ExternalStats | None = None,
                    weather_vocab=DEFAULT_WEATHER_VOCAB
                    ) -> tuple[np.ndarray, ExternalStats]:
    """Encode factor records to a [T, 7] real matrix.

    Columns: hour scaled over 0-23, four min-max scaled continuous factors
    (stats fitted here unless given), weather category code by vocabulary
    order, holiday flag as 0/1.
    """
    vocab_index = {name: i for i, name in enumerate(weather_vocab)}
    for rec in records:
        if rec.weather not in vocab_index:
            raise DataError(
                f"unknown weather category {rec.weather!r}; vocabulary: {list(weather_vocab)}")
    continuous = np.array(
        [[r.temperature, r.wind_speed, r.humidity, r.visibility] for r in records],
        dtype=np.float64)
    if stats is None:
        stats = ExternalStats(continuous.min(axis=0), continuous.max(axis=0))
    spread = stats.maximum - stats.minimum
    spread = np.where(spread == 0, 1.0, spread)
    scaled = (continuous - stats.minimum) / spread
    out = np.empty((len(records), 7), dtype=np.float64)
    out[:, 0] = [r.hour / 23.0 for r in records]
    out[:, 1:5] = scaled
    out[:, 5] = [float(vocab_index[r.weather]) for r in records]
    out[:, 6] = [1.0 if r.holiday else 0.0 for r in records]
    return out, stats


def chronological_split(num_steps: int, train_fraction: float = 0.8) -> tuple[slice, slice]:
    """Chronological train/test split by fraction of the time span."""
    cut = int(round(num_steps * train_fraction))
    cut = min(max(cut, 1), num_steps - 1)
    return slice(0, cut), slice(cut, num_steps)


def synthetic_holiday_days(days: int, first_day: int = 10, period: int = 14,
                           duration: int = 2) -> list[int]:
    """Day indices flagged as holidays by the synthetic schedule."""
    return [d for d in range(days)
            if d >= first_day and (d - first_day) % period < duration]


def generate_synthetic(n_nodes: int, days: int, seed: int,
                       coupling: float = 0.5,
                       start: str = "2023-01-01",
                       first_holiday_day: int = 10,
                       holiday_period_days: int = 14,
                       holiday_duration_days: int = 2,
                       weather_vocab=DEFAULT_WEATHER_VOCAB,
                       ) -> tuple[RawDataset, list[ExternalFactorRecord]]:
    """Deterministic hourly multi-node flows with planted structure.

    Each node carries a daily cycle with its own phase, a weekend boost,
    holiday spikes on the synthetic schedule and Gaussian noise. Node j > 0
    additionally receives `coupling` times node j-1's value one hour
    earlier, planting a cross-node lagged dependency that per-node models
    cannot see. Values are clipped at zero.
    """
    if n_nodes < 2:
        raise DataError("need at least 2 nodes")
    if days < 7:
        raise DataError("need at least 7 days")
    rng = np.random.default_rng(seed)
    T = days * 24
    timestamps = pd.date_range(start=start, periods=T, freq="h")
    hours = timestamps.hour.to_numpy()
    day_idx = np.arange(T) // 24
    weekend = timestamps.dayofweek.to_numpy() >= 5
    holiday_days = set(synthetic_holiday_days(
        days, first_holiday_day, holiday_period_days, holiday_duration_days))
    holiday = np.array([d in holiday_days for d in day_idx])

    base = rng.uniform(80.0, 300.0, n_nodes)
    phase = rng.uniform(0.0, 24.0, n_nodes)
    weekend_gain = rng.uniform(0.15, 0.4, n_nodes)
    holiday_gain = rng.uniform(1.0, 1.8, n_nodes)
    noise_sigma = 0.12 * base

    t_grid = hours[:, None]
    daily = 1.0 + 0.6 * np.sin(2 * np.pi * (t_grid - phase[None, :]) / 24.0)
    evening_bump = 0.5 * np.exp(-((t_grid - 18.5) / 2.0) ** 2)
    level = base[None, :] * (daily + evening_bump
                             + weekend_gain[None, :] * weekend[:, None]
                             + holiday_gain[None, :] * holiday[:, None])
    values = level + rng.normal(0.0, 1.0, (T, n_nodes)) * noise_sigma[None, :]
    if coupling != 0.0:
        for t in range(1, T):
            values[t, 1:] += coupling * values[t - 1, :-1]
    values = np.clip(values, 0.0, None)

    node_names = [f"mode{j}_{'arrival' if j % 2 == 0 else 'departure'}"
                  for j in range(n_nodes)]
    ds = RawDataset(timestamps, values, node_names, interval_hours=1.0)

    season = 18.0 + 8.0 * np.sin(2 * np.pi * day_idx / 365.0)
    temperature = season + 5.0 * np.sin(2 * np.pi * (hours - 14) / 24.0) \
        + rng.normal(0.0, 1.0, T)
    wind = np.abs(3.0 + rng.normal(0.0, 1.5, T))
    humidity = np.clip(60 + 20 * np.sin(2 * np.pi * (hours - 4) / 24.0)
                       + rng.normal(0.0, 5.0, T), 5.0, 100.0)
    visibility = np.clip(20.0 - 0.1 * humidity + rng.normal(0.0, 2.0, T), 1.0, 30.0)
    weather_codes = np.empty(T, dtype=np.int64)
    weather_codes[0] = rng.integers(len(weather_vocab))
    for t in range(1, T):  # sticky weather
        if rng.random() < 0.9:
            weather_codes[t] = weather_codes[t - 1]
        else:
            weather_codes[t] = rng.integers(len(weather_vocab))
    records = [ExternalFactorRecord(
        hour=int(hours[t]),
        temperature=float(temperature[t]),
        wind_speed=float(wind[t]),
        humidity=float(humidity[t]),
        visibility=float(visibility[t]),
        weather=weather_vocab[weather_codes[t]],
        holiday=bool(holiday[t]),
    ) for t in range(T)]
    return ds, records
