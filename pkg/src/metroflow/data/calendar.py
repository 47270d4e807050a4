"""Workday service calendar: 05:00-23:00 split into fixed time-granularity slots."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

SERVICE_START_MIN = 5 * 60
SERVICE_END_MIN = 23 * 60
SERVICE_MINUTES = SERVICE_END_MIN - SERVICE_START_MIN
ALLOWED_TG = (10, 15, 30)
# Patterns of the flow image: same day, previous workday, five workdays earlier.
DAILY_OFFSET = 1
WEEKLY_OFFSET = 5


def slots_per_day(tg_minutes: int) -> int:
    if tg_minutes <= 0 or SERVICE_MINUTES % tg_minutes:
        raise ConfigError(f"time granularity {tg_minutes} min does not divide the 18 h service window")
    return SERVICE_MINUTES // tg_minutes


def workdays(start: dt.date, count: int) -> tuple[dt.date, ...]:
    """The first ``count`` Monday-Friday dates on or after ``start``."""
    if count <= 0:
        raise ConfigError(f"number of workdays must be positive, got {count}")
    out = []
    day = start
    while len(out) < count:
        if day.weekday() < 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return tuple(out)


@dataclass(frozen=True)
class Calendar:
    days: tuple[dt.date, ...]
    tg_minutes: int

    def __post_init__(self):
        slots_per_day(self.tg_minutes)
        if list(self.days) != sorted(set(self.days)):
            raise ConfigError("calendar days must be strictly increasing")

    @property
    def slots_per_day(self) -> int:
        return slots_per_day(self.tg_minutes)

    @property
    def n_days(self) -> int:
        return len(self.days)

    @property
    def n_columns(self) -> int:
        return self.n_days * self.slots_per_day

    def column(self, day: int, slot: int) -> int:
        return day * self.slots_per_day + slot

    def slot_start(self, day: int, slot: int) -> dt.datetime:
        base = dt.datetime.combine(self.days[day], dt.time(0, 0))
        return base + dt.timedelta(minutes=SERVICE_START_MIN + slot * self.tg_minutes)

    def column_starts(self) -> np.ndarray:
        """Start timestamp of every column as ``datetime64[s]``."""
        days = np.array(self.days, dtype="datetime64[D]").astype("datetime64[s]")
        offsets = (SERVICE_START_MIN + np.arange(self.slots_per_day) * self.tg_minutes) * 60
        return (days[:, None] + offsets[None, :].astype("timedelta64[s]")).reshape(-1)

    def day_of_column(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_days), self.slots_per_day)

    def slot_of_column(self) -> np.ndarray:
        return np.tile(np.arange(self.slots_per_day), self.n_days)

    def with_tg(self, tg_minutes: int) -> "Calendar":
        return Calendar(self.days, tg_minutes)
