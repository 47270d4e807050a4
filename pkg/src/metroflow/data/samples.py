"""Min-max scaling and windowed branch inputs for each prediction instant."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError, StateError
from ..graph import MetroGraph
from .calendar import DAILY_OFFSET, WEEKLY_OFFSET, Calendar
from .exogenous import ExogenousSeries
from .flows import FlowCube

log = logging.getLogger(__name__)


class MinMaxScaler:
    """Min-max to [0, 1] along rows; a constant row maps to 0 and is flagged."""

    def __init__(self):
        self.lo: np.ndarray | None = None
        self.hi: np.ndarray | None = None
        self.constant: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.lo is not None

    def fit(self, x: np.ndarray, per_row: bool = False) -> "MinMaxScaler":
        x = np.asarray(x, dtype=float)
        if per_row:
            self.lo, self.hi = x.min(axis=1, keepdims=True), x.max(axis=1, keepdims=True)
        else:
            self.lo, self.hi = np.array(x.min()), np.array(x.max())
        self.constant = self.hi <= self.lo
        return self

    def _span(self) -> np.ndarray:
        if not self.fitted:
            raise StateError("scaler used before fit")
        return np.where(self.constant, 1.0, self.hi - self.lo)

    def transform(self, x: np.ndarray) -> np.ndarray:
        span = self._span()
        return np.where(self.constant, 0.0, (np.asarray(x, dtype=float) - self.lo) / span)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        span = self._span()
        return np.asarray(y, dtype=float) * np.where(self.constant, 0.0, span) + self.lo

    def state(self) -> dict:
        return {"lo": np.asarray(self.lo).tolist(), "hi": np.asarray(self.hi).tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "MinMaxScaler":
        s = cls()
        s.lo, s.hi = np.array(state["lo"], dtype=float), np.array(state["hi"], dtype=float)
        s.constant = s.hi <= s.lo
        return s


@dataclass
class Scaler:
    """Flow and indicator scalers fitted on the training columns only."""

    inflow: MinMaxScaler = field(default_factory=MinMaxScaler)
    outflow: MinMaxScaler = field(default_factory=MinMaxScaler)
    exogenous: MinMaxScaler = field(default_factory=MinMaxScaler)

    def state(self) -> dict:
        return {k: getattr(self, k).state() for k in ("inflow", "outflow", "exogenous")}

    @classmethod
    def from_state(cls, state: dict) -> "Scaler":
        return cls(*(MinMaxScaler.from_state(state[k]) for k in ("inflow", "outflow", "exogenous")))


def fit_scaler(cube: FlowCube, exo: ExogenousSeries, train_days: range | list[int]) -> Scaler:
    spd = cube.calendar.slots_per_day
    cols = np.concatenate([np.arange(d * spd, (d + 1) * spd) for d in train_days])
    if cols.size == 0:
        raise ConfigError("cannot fit scaler on an empty training range")
    return Scaler(
        MinMaxScaler().fit(cube.inflow[:, cols]),
        MinMaxScaler().fit(cube.outflow[:, cols]),
        MinMaxScaler().fit(exo.values[:, cols], per_row=True),
    )


def apply_scaler(scaler: Scaler, cube: FlowCube, exo: ExogenousSeries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return scaler.inflow.transform(cube.inflow), scaler.outflow.transform(cube.outflow), scaler.exogenous.transform(exo.values)


def invert_scaler(scaler: Scaler, scaled_inflow: np.ndarray) -> np.ndarray:
    return scaler.inflow.inverse(scaled_inflow)


@dataclass(eq=False)
class SampleSet:
    """Aligned branch inputs for a set of prediction instants.

    ``inflow``/``outflow`` are ``N x 3 x s x n`` (real-time, daily, weekly),
    ``graph`` is ``N x s x n``, ``exogenous`` is ``N x k x n``; targets are
    the next-slot inflow, scaled and as raw counts.
    """

    inflow: np.ndarray
    outflow: np.ndarray
    graph: np.ndarray
    exogenous: np.ndarray
    target: np.ndarray
    target_counts: np.ndarray
    day: np.ndarray
    slot: np.ndarray
    calendar: Calendar
    scaler: Scaler

    def __len__(self) -> int:
        return len(self.day)

    @property
    def n_stations(self) -> int:
        return self.target.shape[1]

    @property
    def n_steps(self) -> int:
        return self.inflow.shape[-1]

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(
            self.inflow[idx], self.outflow[idx], self.graph[idx], self.exogenous[idx],
            self.target[idx], self.target_counts[idx], self.day[idx], self.slot[idx],
            self.calendar, self.scaler,
        )

    def on_days(self, days) -> "SampleSet":
        return self.subset(np.flatnonzero(np.isin(self.day, list(days))))

    def target_columns(self) -> np.ndarray:
        return self.day * self.calendar.slots_per_day + self.slot

    def timestamps(self) -> np.ndarray:
        return self.calendar.column_starts()[self.target_columns()]


def eligible_instants(calendar: Calendar, n: int) -> list[tuple[int, int]]:
    """``(day, last window slot)`` pairs with full same-day, daily and weekly history.

    Windows never reach back across the service start, and the day must have
    a workday five workdays earlier.
    """
    spd = calendar.slots_per_day
    return [(d, j) for d in range(WEEKLY_OFFSET, calendar.n_days) for j in range(n - 1, spd - 1)]


def build_samples(cube: FlowCube, exo: ExogenousSeries, graph: MetroGraph, n: int, scaler: Scaler) -> SampleSet:
    if n < 1:
        raise ConfigError(f"history length must be positive, got {n}")
    if exo.calendar.n_columns != cube.calendar.n_columns:
        raise DimensionError("exogenous series and flow cube cover different slot grids")
    if tuple(graph.stations) != tuple(cube.stations):
        raise DimensionError("flow cube rows do not follow the graph's station order")
    cal = cube.calendar
    spd = cal.slots_per_day
    s, k = graph.n_stations, exo.n_indicators
    inst = eligible_instants(cal, n)
    if not inst:
        log.warning("build_samples: no instant has %d workdays of history and %d same-day slots", WEEKLY_OFFSET + 1, n)
        z = np.zeros((0,))
        return SampleSet(
            np.zeros((0, 3, s, n)), np.zeros((0, 3, s, n)), np.zeros((0, s, n)), np.zeros((0, k, n)),
            np.zeros((0, s)), np.zeros((0, s), dtype=np.int64), z.astype(int), z.astype(int), cal, scaler,
        )
    days = np.array([d for d, _ in inst])
    ends = np.array([j for _, j in inst])
    steps = np.arange(n - 1, -1, -1)
    slots = ends[:, None] - steps[None, :]  # N x n, oldest first

    def cols(day_offset: int) -> np.ndarray:
        return (days - day_offset)[:, None] * spd + slots

    fin, fout, fexo = apply_scaler(scaler, cube, exo)

    def window(series: np.ndarray, c: np.ndarray) -> np.ndarray:
        return series[:, c].transpose(1, 0, 2)  # N x rows x n

    pattern_cols = [cols(0), cols(DAILY_OFFSET), cols(WEEKLY_OFFSET)]
    inflow = np.stack([window(fin, c) for c in pattern_cols], axis=1)
    outflow = np.stack([window(fout, c) for c in pattern_cols], axis=1)
    graph_in = graph.laplacian @ inflow[:, 0]
    exo_in = window(fexo, pattern_cols[0])
    target_cols = days * spd + ends + 1
    return SampleSet(
        inflow, outflow, graph_in, exo_in,
        fin[:, target_cols].T.copy(), cube.inflow[:, target_cols].T.copy(),
        days, ends + 1, cal, scaler,
    )
