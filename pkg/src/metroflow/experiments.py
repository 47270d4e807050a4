"""Variant runs, the ablation table, and the time-granularity comparison."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data.flows import FlowCube, aggregate_cube
from .errors import ConfigError, MetroflowError
from .metrics import all_metrics
from .model import VARIANTS, ResLSTM, make_variant
from .training import Dataset, MetricsReport, TrainConfig, TrainResult, evaluate, train

log = logging.getLogger(__name__)

TG_ROWS = (("10*3", 10), ("15*2", 15), ("30", 30))
TARGET_TG = 30


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("METROFLOW_THREADS", "1")))
    except ValueError:
        raise ConfigError("METROFLOW_THREADS must be an integer") from None


def run_variant(dataset: Dataset, variant: str, config: TrainConfig, **spec_overrides) -> tuple[ResLSTM, TrainResult, MetricsReport]:
    spec = make_variant(variant, dataset.graph.n_stations, n=dataset.n, seed=config.seed, **spec_overrides)
    model = ResLSTM(spec)
    result = train(model, dataset.train, dataset.val, config, kind="reslstm", spec=spec.to_dict(), default_lr=spec.lr)
    report = evaluate(model, dataset.test, dataset.graph.stations, result.history)
    return model, result, report


@dataclass
class AblationRow:
    variant: str
    rmse: float
    mae: float
    wmape: float
    n_params: int
    epochs: int
    error: str = ""


def _ablation_job(args) -> AblationRow:
    dataset, variant, config, overrides = args
    try:
        model, result, report = run_variant(dataset, variant, config, **overrides)
        return AblationRow(variant, report.rmse, report.mae, report.wmape, model.num_parameters(), result.stopped_epoch)
    except MetroflowError as exc:
        log.error("variant %s failed: %s", variant, exc)
        return AblationRow(variant, float("nan"), float("nan"), float("nan"), 0, 0, f"{type(exc).__name__}: {exc}")


def run_ablation(dataset: Dataset, config: TrainConfig, variants=VARIANTS, **spec_overrides) -> list[AblationRow]:
    """Train and score every variant under one seed; a failing variant yields a row with ``error`` set."""
    jobs = [(dataset, v, config, spec_overrides) for v in variants]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_ablation_job, jobs))
    return [_ablation_job(j) for j in jobs]


# -- time granularity ----------------------------------------------------------------


def check_double_ingestion(cubes: dict[int, FlowCube]) -> None:
    """Finer cubes re-binned to 30 min must equal the native 30-min cube exactly."""
    native = cubes[TARGET_TG]
    for tg, cube in cubes.items():
        if tg == TARGET_TG:
            continue
        agg = aggregate_cube(cube, TARGET_TG)
        if agg.calendar != native.calendar or not (
            np.array_equal(agg.inflow, native.inflow) and np.array_equal(agg.outflow, native.outflow)
        ):
            raise ConfigError(f"{tg}-min counts aggregated to 30 min differ from native 30-min ingestion")


def _blocks(report: MetricsReport, tg: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sum actuals and predictions into complete 30-minute blocks."""
    factor = TARGET_TG // tg
    minutes = report.timestamps.astype("datetime64[m]").astype(np.int64)
    block = (minutes // TARGET_TG) * TARGET_TG
    keys, inverse, counts = np.unique(block, return_inverse=True, return_counts=True)
    s = report.actual.shape[1]
    actual = np.zeros((len(keys), s))
    pred = np.zeros((len(keys), s))
    np.add.at(actual, inverse, report.actual)
    np.add.at(pred, inverse, report.predicted)
    full = counts == factor
    return keys[full], actual[full], pred[full]


@dataclass
class TGRow:
    label: str
    rmse: float
    mae: float
    wmape: float
    n_points: int


def tg_experiment(reports: dict[int, MetricsReport]) -> list[TGRow]:
    """Score 10- and 15-min predictions re-aggregated to 30 min alongside native 30-min ones.

    Only 30-minute blocks covered completely at every granularity are scored,
    so the three rows describe the same station-periods.
    """
    missing = [tg for _, tg in TG_ROWS if tg not in reports]
    if missing:
        raise ConfigError(f"tg experiment is missing results for TG {missing} min")
    blocks = {tg: _blocks(reports[tg], tg) for _, tg in TG_ROWS}
    common = blocks[10][0]
    for tg in (15, 30):
        common = np.intersect1d(common, blocks[tg][0])
    if common.size == 0:
        raise ConfigError("the granularities share no complete 30-minute evaluation period")
    selected = {}
    for tg, (keys, actual, pred) in blocks.items():
        idx = np.searchsorted(keys, common)
        selected[tg] = (actual[idx], pred[idx])
    for tg in (10, 15):
        if not np.array_equal(selected[tg][0], selected[30][0]):
            raise ConfigError(f"aggregated {tg}-min actuals do not match native 30-min actuals")
    rows = []
    for label, tg in TG_ROWS:
        actual, pred = selected[tg]
        m = all_metrics(actual, pred)
        rows.append(TGRow(label, m["rmse"], m["mae"], m["wmape"], int(actual.size)))
    return rows
