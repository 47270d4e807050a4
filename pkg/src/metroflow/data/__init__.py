from .calendar import ALLOWED_TG, Calendar, slots_per_day, workdays
from .exogenous import (
    AIR_COLUMNS,
    INDICATORS,
    WEATHER_COLUMNS,
    ExogenousSeries,
    Recordings,
    air_recordings,
    align_exogenous,
    weather_recordings,
)
from .flows import AFCRecords, FlowCube, aggregate_cube, aggregate_tg, ingest_afc
from .samples import (
    MinMaxScaler,
    SampleSet,
    Scaler,
    apply_scaler,
    build_samples,
    eligible_instants,
    fit_scaler,
    invert_scaler,
)
from .synth import SynthData, synth_flows, synth_records

__all__ = [
    "ALLOWED_TG", "Calendar", "slots_per_day", "workdays",
    "AIR_COLUMNS", "INDICATORS", "WEATHER_COLUMNS", "ExogenousSeries", "Recordings",
    "air_recordings", "align_exogenous", "weather_recordings",
    "AFCRecords", "FlowCube", "aggregate_cube", "aggregate_tg", "ingest_afc",
    "MinMaxScaler", "SampleSet", "Scaler", "apply_scaler", "build_samples", "eligible_instants",
    "fit_scaler", "invert_scaler",
    "SynthData", "synth_flows", "synth_records",
]
