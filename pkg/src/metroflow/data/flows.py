"""AFC tap records, station x time flow cubes, and time-granularity aggregation."""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import DataError, DimensionError, UnknownStationError
from ..graph import MetroGraph
from .calendar import SERVICE_END_MIN, SERVICE_START_MIN, Calendar

log = logging.getLogger(__name__)

AFC_COLUMNS = ["card_id", "entry_station", "exit_station", "entry_time", "exit_time"]


@dataclass
class AFCRecords:
    """Columnar tap-in/tap-out records; times are ``datetime64[s]`` local time."""

    card_id: np.ndarray
    entry_station: np.ndarray
    exit_station: np.ndarray
    entry_time: np.ndarray
    exit_time: np.ndarray

    def __post_init__(self):
        n = len(self.card_id)
        for name in AFC_COLUMNS[1:]:
            if len(getattr(self, name)) != n:
                raise DataError(f"AFC column {name} has {len(getattr(self, name))} rows, expected {n}")
        self.entry_time = np.asarray(self.entry_time, dtype="datetime64[s]")
        self.exit_time = np.asarray(self.exit_time, dtype="datetime64[s]")

    def __len__(self) -> int:
        return len(self.card_id)

    @classmethod
    def empty(cls) -> "AFCRecords":
        e = np.array([], dtype="datetime64[s]")
        return cls(np.array([], dtype=np.int64), np.array([], dtype=str), np.array([], dtype=str), e, e.copy())

    def to_csv(self, path: Path) -> None:
        frame = pd.DataFrame(
            {
                "card_id": self.card_id,
                "entry_station": self.entry_station,
                "exit_station": self.exit_station,
                "entry_time": np.datetime_as_string(self.entry_time, unit="s"),
                "exit_time": np.datetime_as_string(self.exit_time, unit="s"),
            }
        )
        frame.to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def from_csv(cls, path: Path) -> "AFCRecords":
        frame = pd.read_csv(path, dtype={"entry_station": str, "exit_station": str})
        missing = set(AFC_COLUMNS) - set(frame.columns)
        if missing:
            raise DataError(f"{path}: missing AFC columns {sorted(missing)}")
        return cls(
            frame["card_id"].to_numpy(),
            frame["entry_station"].to_numpy(dtype=str),
            frame["exit_station"].to_numpy(dtype=str),
            pd.to_datetime(frame["entry_time"]).to_numpy().astype("datetime64[s]"),
            pd.to_datetime(frame["exit_time"]).to_numpy().astype("datetime64[s]"),
        )


@dataclass(eq=False)
class FlowCube:
    """Inflow and outflow counts, stations as rows (graph order), slots as columns."""

    calendar: Calendar
    stations: tuple[str, ...]
    inflow: np.ndarray
    outflow: np.ndarray
    skipped_entries: int = 0
    skipped_exits: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (len(self.stations), self.calendar.n_columns)
        for name in ("inflow", "outflow"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            if arr.dtype.kind not in "iu" or (arr < 0).any():
                raise DataError(f"{name} must hold non-negative integer counts")

    @property
    def tg_minutes(self) -> int:
        return self.calendar.tg_minutes

    @property
    def days(self) -> tuple[dt.date, ...]:
        return self.calendar.days

    def write_csv(self, inflow_path: Path, outflow_path: Path) -> None:
        cols = np.datetime_as_string(self.calendar.column_starts(), unit="m")
        for arr, path in ((self.inflow, inflow_path), (self.outflow, outflow_path)):
            frame = pd.DataFrame(arr, index=pd.Index(self.stations, name="station"), columns=cols)
            frame.to_csv(path, lineterminator="\n")

    @classmethod
    def read_csv(cls, inflow_path: Path, outflow_path: Path, tg_minutes: int) -> "FlowCube":
        frames = [pd.read_csv(p, index_col=0) for p in (inflow_path, outflow_path)]
        stamps = pd.to_datetime(frames[0].columns)
        days = tuple(sorted({ts.date() for ts in stamps}))
        cal = Calendar(days, tg_minutes)
        if len(stamps) != cal.n_columns:
            raise DimensionError(f"{inflow_path}: {len(stamps)} columns, expected {cal.n_columns}")
        stations = tuple(str(s) for s in frames[0].index)
        return cls(cal, stations, frames[0].to_numpy(np.int64), frames[1].to_numpy(np.int64))


def _station_indices(names: np.ndarray, index: dict[str, int]) -> np.ndarray:
    if len(names) == 0:
        return np.zeros(0, dtype=int)
    uniq, inverse = np.unique(names, return_inverse=True)
    lookup = np.empty(len(uniq), dtype=int)
    for k, name in enumerate(uniq):
        if name not in index:
            raise UnknownStationError(f"AFC record references unknown station {name!r}")
        lookup[k] = index[name]
    return lookup[inverse]


def _bin_events(stations: np.ndarray, times: np.ndarray, cal: Calendar, n_stations: int) -> tuple[np.ndarray, int]:
    counts = np.zeros((n_stations, cal.n_columns), dtype=np.int64)
    if len(times) == 0:
        return counts, 0
    day = times.astype("datetime64[D]")
    seconds = (times - day.astype("datetime64[s]")).astype(np.int64)
    cal_days = np.array(cal.days, dtype="datetime64[D]")
    day_idx = np.searchsorted(cal_days, day)
    known = (day_idx < len(cal_days)) & (cal_days[np.minimum(day_idx, len(cal_days) - 1)] == day)
    in_window = (seconds >= SERVICE_START_MIN * 60) & (seconds < SERVICE_END_MIN * 60)
    keep = known & in_window
    slot = (seconds[keep] - SERVICE_START_MIN * 60) // (cal.tg_minutes * 60)
    col = day_idx[keep] * cal.slots_per_day + slot
    np.add.at(counts, (stations[keep], col), 1)
    return counts, int((~keep).sum())


def ingest_afc(
    records: AFCRecords,
    graph: MetroGraph,
    tg_minutes: int,
    days: tuple[dt.date, ...] | None = None,
) -> FlowCube:
    """Count tap-ins by entry time and tap-outs by exit time into half-open slots.

    Records outside 05:00-23:00, or on dates outside ``days`` (default: the
    weekdays present in the records), are skipped and counted separately for
    entries and exits.
    """
    if days is None:
        present = np.unique(records.entry_time.astype("datetime64[D]")).astype(dt.date)
        days = tuple(d for d in present if d.weekday() < 5)
        if not days:
            raise DataError("no workday records to ingest; pass an explicit calendar")
    cal = Calendar(tuple(days), tg_minutes)
    index = graph.index
    entry = _station_indices(records.entry_station, index)
    exit_ = _station_indices(records.exit_station, index)
    inflow, skipped_in = _bin_events(entry, records.entry_time, cal, graph.n_stations)
    outflow, skipped_out = _bin_events(exit_, records.exit_time, cal, graph.n_stations)
    if skipped_in or skipped_out:
        log.info("ingest_afc: skipped %d entries and %d exits outside the service calendar", skipped_in, skipped_out)
    return FlowCube(cal, graph.stations, inflow, outflow, skipped_in, skipped_out)


def aggregate_tg(series: np.ndarray, factor: int) -> np.ndarray:
    """Sum non-overlapping runs of ``factor`` slots along the last axis."""
    series = np.asarray(series)
    if factor < 1 or series.shape[-1] % factor:
        raise DimensionError(f"cannot aggregate length {series.shape[-1]} by factor {factor}")
    return series.reshape(series.shape[:-1] + (series.shape[-1] // factor, factor)).sum(axis=-1)


def aggregate_cube(cube: FlowCube, tg_minutes: int) -> FlowCube:
    """Re-bin a cube to a coarser granularity that is a multiple of its own."""
    if tg_minutes % cube.tg_minutes:
        raise DimensionError(f"{tg_minutes} min is not a multiple of {cube.tg_minutes} min")
    factor = tg_minutes // cube.tg_minutes
    return FlowCube(
        cube.calendar.with_tg(tg_minutes),
        cube.stations,
        aggregate_tg(cube.inflow, factor),
        aggregate_tg(cube.outflow, factor),
        cube.skipped_entries,
        cube.skipped_exits,
    )
