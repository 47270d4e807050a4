"""Desk-scale synthetic metro data: tap records plus weather and air-quality recordings.

Flows are generated at 5-minute resolution (a common divisor of every
supported granularity) as Poisson counts around per-station daily profiles,
then expanded into individual tap records so that every granularity is
ingested from the same events.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..graph import MetroGraph
from .calendar import SERVICE_MINUTES, SERVICE_START_MIN, Calendar, workdays
from .exogenous import (
    AIR_PERIOD_MIN,
    WEATHER_PERIOD_MIN,
    ExogenousSeries,
    Recordings,
    air_recordings,
    align_exogenous,
    weather_recordings,
)
from .flows import AFCRecords, FlowCube, ingest_afc

BASE_MINUTES = 5
BASE_SLOTS = SERVICE_MINUTES // BASE_MINUTES
DEFAULT_START = dt.date(2016, 2, 29)
WEEKDAY_FACTOR = (1.0, 0.98, 0.97, 1.0, 1.07)
RESIDENTIAL_PEAK_BAND = (7 * 60, 9 * 60)


@dataclass
class SynthData:
    records: AFCRecords
    weather: Recordings
    air: Recordings
    days: tuple[dt.date, ...]
    truth: dict


def _bump(minutes: np.ndarray, centre: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((minutes - centre) / width) ** 2)


def _profiles(graph: MetroGraph, rng: np.random.Generator) -> tuple[np.ndarray, list[str], list[dict]]:
    """Per-station relative entry rate at each 5-minute base slot."""
    minutes = SERVICE_START_MIN + BASE_MINUTES * (np.arange(BASE_SLOTS) + 0.5)
    transfers = set(graph.transfer_stations())
    plain = [i for i, s in enumerate(graph.stations) if s not in transfers]
    railway = {plain[int(rng.integers(0, len(plain)))]} if len(plain) >= 3 else set()
    kinds, params, rows = [], [], []
    for i, name in enumerate(graph.stations):
        if name in transfers:
            am, pm = rng.uniform(7.75, 8.5) * 60, rng.uniform(17.5, 18.5) * 60
            row = 0.25 + 0.9 * _bump(minutes, am, 45) + 1.0 * _bump(minutes, pm, 55)
            kinds.append("hub")
            params.append({"am_peak_min": am, "pm_peak_min": pm})
        elif i in railway:
            centres = np.sort(rng.uniform(6 * 60, 22 * 60, size=4))
            amps = rng.uniform(0.4, 0.9, size=4)
            row = 0.45 + sum(a * _bump(minutes, c, 20) for a, c in zip(amps, centres))
            kinds.append("railway")
            params.append({"bump_min": centres.tolist(), "bump_amp": amps.tolist()})
        else:
            lo, hi = RESIDENTIAL_PEAK_BAND
            am = rng.uniform(lo + 20, hi - 20)
            row = 0.12 + 1.0 * _bump(minutes, am, 35) + 0.3 * _bump(minutes, 18.5 * 60, 80)
            kinds.append("residential")
            params.append({"am_peak_min": am})
        rows.append(row / row.max())
    return np.array(rows), kinds, params


def _exogenous_recordings(days: tuple[dt.date, ...], rng: np.random.Generator) -> tuple[Recordings, Recordings]:
    """Half-hourly weather and hourly air quality covering each day's service window."""
    w_times, w_vals, a_times, a_vals = [], [], [], []
    mean_temp = 5.0
    log_aqi = np.log(80.0)
    for day in days:
        base = np.datetime64(day, "s")
        mean_temp = 0.6 * mean_temp + 0.4 * 5.0 + rng.normal(0, 3.0)
        halfhours = np.arange(SERVICE_START_MIN, SERVICE_START_MIN + SERVICE_MINUTES, WEATHER_PERIOD_MIN)
        hour_of_day = halfhours / 60.0
        temp = mean_temp + 5.0 * np.sin((hour_of_day - 9.0) / 24.0 * 2 * np.pi) + rng.normal(0, 0.8, len(halfhours))
        dew = temp - rng.uniform(5.0, 18.0, len(halfhours))
        rh = 100.0 * np.exp(17.625 * dew / (243.04 + dew) - 17.625 * temp / (243.04 + temp))
        wind = rng.gamma(2.0, 2.0, len(halfhours))
        w_times.append(base + (halfhours * 60).astype("timedelta64[s]"))
        w_vals.append(np.column_stack([np.round(temp), np.round(dew), np.round(np.clip(rh, 0, 100)), np.round(wind)]))

        hours = np.arange(SERVICE_START_MIN, SERVICE_START_MIN + SERVICE_MINUTES, AIR_PERIOD_MIN)
        day_level = np.log(80.0) + rng.normal(0, 0.45)
        aqi = np.empty(len(hours))
        for h in range(len(hours)):
            log_aqi = day_level + 0.75 * (log_aqi - day_level) + rng.normal(0, 0.35)
            aqi[h] = np.exp(np.clip(log_aqi, np.log(10.0), np.log(450.0)))
        noise = lambda scale: np.exp(rng.normal(0, scale, len(hours)))  # noqa: E731
        pm25 = 0.75 * aqi * noise(0.1)
        pm10 = 0.95 * aqi * noise(0.1)
        so2 = 4.0 + 0.05 * aqi * noise(0.2)
        no2 = 20.0 + 0.3 * aqi * noise(0.15)
        co = 0.3 + 0.01 * aqi * noise(0.1)
        o3 = np.clip(60.0 - 0.2 * aqi, 2.0, None) * noise(0.2)
        a_times.append(base + (hours * 60).astype("timedelta64[s]"))
        a_vals.append(np.column_stack([np.round(aqi), np.round(pm25), np.round(pm10), np.round(so2),
                                       np.round(no2), np.round(co, 1), np.round(o3)]))
    return (
        weather_recordings(np.concatenate(w_times), np.vstack(w_vals)),
        air_recordings(np.concatenate(a_times), np.vstack(a_vals)),
    )


def exogenous_travel_factor(exo: ExogenousSeries, weather_effect: float) -> np.ndarray:
    """Multiplicative demand factor in [1 - effect, 1 + effect] per slot.

    Polluted air and cold weather suppress travel.
    """
    aqi = exo.values[exo.names.index("aqi")]
    temp = exo.values[exo.names.index("temperature_c")]
    badness = 0.8 * (np.log(aqi) - np.log(80.0)) / 0.5 + 0.4 * (5.0 - temp) / 6.0
    return 1.0 - weather_effect * np.tanh(badness)


def synth_records(
    graph: MetroGraph,
    days: int,
    weather_effect: float = 0.3,
    seed: int = 0,
    peak_rate: float = 4.0,
    response_lag_minutes: int = 60,
    start: dt.date = DEFAULT_START,
) -> SynthData:
    """Generate tap records for ``days`` workdays.

    ``peak_rate`` is the mean number of entries per minute at a station's
    busiest time of day before weekday, daily and weather modulation.
    Demand reacts to the conditions recorded ``response_lag_minutes``
    earlier (clamped to the day's first recording).
    """
    if days <= 0:
        raise ConfigError(f"days must be positive, got {days}")
    if not 0.0 <= weather_effect < 1.0:
        raise ConfigError(f"weather_effect must lie in [0, 1), got {weather_effect}")
    rng = np.random.default_rng(seed)
    calendar_days = workdays(start, days)
    profiles, kinds, kind_params = _profiles(graph, rng)
    scale = peak_rate * rng.uniform(0.6, 1.4, size=graph.n_stations)
    weather, air = _exogenous_recordings(calendar_days, rng)

    base_cal = Calendar(calendar_days, BASE_MINUTES)
    exo5 = align_exogenous(weather, air, BASE_MINUTES, base_cal)
    if response_lag_minutes < 0 or response_lag_minutes % BASE_MINUTES:
        raise ConfigError(f"response lag must be a non-negative multiple of {BASE_MINUTES} min")
    lagged = np.maximum(np.arange(BASE_SLOTS) - response_lag_minutes // BASE_MINUTES, 0)
    factor = exogenous_travel_factor(exo5, weather_effect).reshape(days, BASE_SLOTS)[:, lagged]
    weekday = np.array([WEEKDAY_FACTOR[d.weekday()] for d in calendar_days])
    day_noise = rng.normal(1.0, 0.03, size=days)
    rate = (
        scale[:, None, None] * profiles[:, None, :] * BASE_MINUTES
        * (weekday * day_noise)[None, :, None] * factor[None, :, :]
    )
    counts = rng.poisson(rate)  # stations x days x base slots

    station_idx, day_idx, slot_idx = np.nonzero(counts)
    reps = counts[station_idx, day_idx, slot_idx]
    origin = np.repeat(station_idx, reps)
    rec_day = np.repeat(day_idx, reps)
    rec_slot = np.repeat(slot_idx, reps)
    n_rec = len(origin)
    offset_s = (SERVICE_START_MIN + rec_slot * BASE_MINUTES) * 60 + rng.integers(0, BASE_MINUTES * 60, size=n_rec)
    day_start = np.array(calendar_days, dtype="datetime64[D]").astype("datetime64[s]")
    entry_time = day_start[rec_day] + offset_s.astype("timedelta64[s]")

    dest = _destinations(graph, kinds, origin, rec_slot, rng)
    hops = graph.hop_distances()[origin, dest]
    travel_s = (150 * hops + rng.integers(120, 480, size=n_rec)).astype("timedelta64[s]")
    exit_time = entry_time + travel_s

    order = np.lexsort((origin, entry_time))
    names = np.array(graph.stations)
    records = AFCRecords(
        np.arange(1, n_rec + 1, dtype=np.int64),
        names[origin[order]],
        names[dest[order]],
        entry_time[order],
        exit_time[order],
    )
    truth = {
        "seed": seed,
        "days": [d.isoformat() for d in calendar_days],
        "weather_effect": weather_effect,
        "peak_rate_per_min": peak_rate,
        "base_minutes": BASE_MINUTES,
        "stations": [
            {"id": s, "kind": k, "scale": float(sc), **p}
            for s, k, sc, p in zip(graph.stations, kinds, scale, kind_params)
        ],
        "weekday_factor": list(WEEKDAY_FACTOR),
        "day_noise": day_noise.tolist(),
        "weather_factor": "1 - weather_effect * tanh(0.8*(ln AQI - ln 80)/0.5 + 0.4*(5 - temperature)/6)",
        "response_lag_minutes": response_lag_minutes,
        "n_records": int(n_rec),
    }
    return SynthData(records, weather, air, calendar_days, truth)


def _destinations(graph: MetroGraph, kinds: list[str], origin: np.ndarray, slot: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Morning trips lean towards hubs and railway stations, evening trips towards homes."""
    s = graph.n_stations
    dest = np.empty_like(origin)
    if s == 1:
        dest[:] = 0
        return dest
    residential = np.array([k == "residential" for k in kinds])
    morning = (SERVICE_START_MIN + slot * BASE_MINUTES) < 12 * 60
    for o in range(s):
        for is_morning in (True, False):
            mask = (origin == o) & (morning == is_morning)
            m = int(mask.sum())
            if not m:
                continue
            w = np.where(residential, 1.0, 3.0) if is_morning else np.where(residential, 3.0, 1.0)
            w[o] = 0.0
            dest[mask] = rng.choice(s, size=m, p=w / w.sum())
    return dest


def synth_flows(
    graph: MetroGraph,
    days: int,
    tg_minutes: int,
    weather_effect: float = 0.3,
    seed: int = 0,
    **kwargs,
) -> tuple[FlowCube, ExogenousSeries, dict]:
    data = synth_records(graph, days, weather_effect, seed, **kwargs)
    cube = ingest_afc(data.records, graph, tg_minutes, data.days)
    exo = align_exogenous(data.weather, data.air, tg_minutes, cube.calendar)
    return cube, exo, data.truth
