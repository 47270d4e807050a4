import dataclasses

import numpy as np
import pytest

from metroflow import experiments
from metroflow.data import align_exogenous, ingest_afc, synth_records
from metroflow.errors import ConfigError, NumericError
from metroflow.experiments import (
    TG_ROWS,
    check_double_ingestion,
    run_ablation,
    run_variant,
    tg_experiment,
)
from metroflow.graph import synth_topology
from metroflow.model import VARIANTS, expected_param_count, make_variant
from metroflow.training import TrainConfig, prepare_dataset, report_from_predictions

SMALL = dict(filters=(4, 8), exo_hidden=6, trunk_hidden=7)


@pytest.fixture(scope="module")
def tg_setup():
    g = synth_topology(2, 3, 1, seed=1)
    data = synth_records(g, 12, 0.3, seed=1)
    cubes = {tg: ingest_afc(data.records, g, tg, data.days) for _, tg in TG_ROWS}
    datasets = {
        tg: prepare_dataset(cube, align_exogenous(data.weather, data.air, tg, cube.calendar), g)
        for tg, cube in cubes.items()
    }
    return cubes, datasets


def _perfect_reports(datasets, offset=0.0):
    reports = {}
    for tg, ds in datasets.items():
        r = report_from_predictions(ds.test, ds.test.target, ds.graph.stations)
        reports[tg] = dataclasses.replace(r, predicted=r.actual + offset)
    return reports


def test_ablation_emits_six_rows_with_documented_sizes(small_dataset):
    rows = run_ablation(small_dataset, TrainConfig(epochs_max=1, seed=3), **SMALL)
    assert [r.variant for r in rows] == list(VARIANTS)
    for r in rows:
        spec = make_variant(r.variant, 5, n=small_dataset.n, seed=3, **SMALL)
        assert r.error == "" and r.n_params == expected_param_count(spec) and r.epochs == 1


def test_ablation_row_equals_isolated_run(small_dataset):
    cfg = TrainConfig(epochs_max=2, seed=4)
    row = run_ablation(small_dataset, cfg, variants=("no_a",), **SMALL)[0]
    _, _, report = run_variant(small_dataset, "no_a", cfg, **SMALL)
    assert (row.rmse, row.mae, row.wmape) == (report.rmse, report.mae, report.wmape)


def test_failing_variant_leaves_others_intact(small_dataset, monkeypatch):
    real = experiments.run_variant

    def flaky(dataset, variant, config, **kw):
        if variant == "no_wa":
            raise NumericError("diverged")
        return real(dataset, variant, config, **kw)

    monkeypatch.setattr(experiments, "run_variant", flaky)
    rows = run_ablation(small_dataset, TrainConfig(epochs_max=1), variants=("full", "no_wa"), **SMALL)
    assert rows[0].error == "" and np.isfinite(rows[0].rmse)
    assert "diverged" in rows[1].error and np.isnan(rows[1].rmse)


def test_double_ingestion_agrees(tg_setup):
    cubes, _ = tg_setup
    check_double_ingestion(cubes)
    tampered = dict(cubes)
    bad = cubes[10].inflow.copy()
    bad[0, 0] += 1
    tampered[10] = dataclasses.replace(cubes[10], inflow=bad)
    with pytest.raises(ConfigError, match="10-min"):
        check_double_ingestion(tampered)


def test_tg_rows_on_identical_predictions(tg_setup):
    _, datasets = tg_setup
    rows = tg_experiment(_perfect_reports(datasets))
    assert [r.label for r in rows] == ["10*3", "15*2", "30"]
    assert all(r.rmse == r.mae == r.wmape == 0.0 for r in rows)
    assert len({r.n_points for r in rows}) == 1 and rows[0].n_points > 0


def test_tg_errors_add_up_over_sub_slots(tg_setup):
    _, datasets = tg_setup
    rows = tg_experiment(_perfect_reports(datasets, offset=1.0))
    assert [r.mae for r in rows] == [3.0, 2.0, 1.0]


def test_tg_missing_granularity(tg_setup):
    _, datasets = tg_setup
    reports = _perfect_reports(datasets)
    del reports[15]
    with pytest.raises(ConfigError, match=r"\[15\]"):
        tg_experiment(reports)
