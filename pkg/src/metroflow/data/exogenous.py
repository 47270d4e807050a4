"""Weather and air-quality recordings aligned onto the flow slot grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import DataError, DimensionError
from .calendar import Calendar

log = logging.getLogger(__name__)

WEATHER_COLUMNS = ("temperature_c", "dew_point_c", "rel_humidity_pct", "wind_speed_ms")
AIR_COLUMNS = ("aqi", "pm25", "pm10", "so2", "no2", "co", "o3")
INDICATORS = WEATHER_COLUMNS + AIR_COLUMNS
WEATHER_PERIOD_MIN = 30
AIR_PERIOD_MIN = 60


@dataclass
class Recordings:
    """Timestamped rows of one source, sorted by time."""

    times: np.ndarray  # datetime64[s]
    values: np.ndarray  # rows x columns
    columns: tuple[str, ...]
    period_minutes: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype="datetime64[s]")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.times), len(self.columns)):
            raise DimensionError(f"recordings: values {self.values.shape} vs {len(self.times)} x {len(self.columns)}")
        order = np.argsort(self.times, kind="stable")
        self.times, self.values = self.times[order], self.values[order]

    def to_csv(self, path: Path) -> None:
        frame = pd.DataFrame(self.values, columns=list(self.columns))
        frame.insert(0, "timestamp", np.datetime_as_string(self.times, unit="m"))
        frame.to_csv(path, index=False, lineterminator="\n", float_format="%.6g")

    @classmethod
    def from_csv(cls, path: Path, columns: tuple[str, ...], period_minutes: int) -> "Recordings":
        frame = pd.read_csv(path)
        missing = {"timestamp", *columns} - set(frame.columns)
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        times = pd.to_datetime(frame["timestamp"]).to_numpy().astype("datetime64[s]")
        return cls(times, frame[list(columns)].to_numpy(float), columns, period_minutes)


def weather_recordings(times, values) -> Recordings:
    return Recordings(times, values, WEATHER_COLUMNS, WEATHER_PERIOD_MIN)


def air_recordings(times, values) -> Recordings:
    return Recordings(times, values, AIR_COLUMNS, AIR_PERIOD_MIN)


@dataclass(eq=False)
class ExogenousSeries:
    """Indicator rows (weather first, then air quality) on the flow slot grid."""

    calendar: Calendar
    values: np.ndarray  # indicators x columns
    names: tuple[str, ...] = INDICATORS
    filled_gaps: int = 0

    def __post_init__(self):
        if self.values.shape != (len(self.names), self.calendar.n_columns):
            raise DimensionError(f"exogenous values {self.values.shape}, expected {(len(self.names), self.calendar.n_columns)}")
        if not np.isfinite(self.values).all():
            raise DataError("exogenous series has missing values")
        if "rel_humidity_pct" in self.names:
            rh = self.values[self.names.index("rel_humidity_pct")]
            if (rh < 0).any() or (rh > 100).any():
                raise DataError("relative humidity outside [0, 100]")

    @property
    def n_indicators(self) -> int:
        return len(self.names)


def _align(rec: Recordings, starts: np.ndarray) -> tuple[np.ndarray, int]:
    pos = np.searchsorted(rec.times, starts, side="right") - 1
    if (pos < 0).any():
        first = starts[np.argmax(pos < 0)]
        raise DataError(f"no {rec.columns[0]}.. recording at or before {first}")
    age = starts - rec.times[pos]
    stale = age >= np.timedelta64(rec.period_minutes * 60, "s")
    n_stale = int(stale.sum())
    if n_stale:
        log.warning("%d slots forward-filled across a gap in %s recordings", n_stale, rec.columns[0])
    return rec.values[pos].T, n_stale


def align_exogenous(weather: Recordings, air: Recordings | None, tg_minutes: int, calendar: Calendar) -> ExogenousSeries:
    """Give each slot the most recent recording taken at or before the slot start."""
    if calendar.tg_minutes != tg_minutes:
        calendar = calendar.with_tg(tg_minutes)
    starts = calendar.column_starts()
    w, w_gaps = _align(weather, starts)
    rows, names, gaps = [w], list(weather.columns), w_gaps
    if air is not None:
        a, a_gaps = _align(air, starts)
        rows.append(a)
        names += list(air.columns)
        gaps += a_gaps
    return ExogenousSeries(calendar, np.vstack(rows), tuple(names), gaps)
