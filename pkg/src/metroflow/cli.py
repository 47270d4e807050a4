"""Command-line front end: ``metroflow {synth,train,evaluate,ablate,tg,gradcheck}``.

Every command reads an optional flat JSON config (``--config``), applies
flag overrides, and writes plain files under ``--out``. Exit codes: 0 on
success, 2 configuration, 3 data, 4 numeric, 5 I/O.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import math
import sys
from pathlib import Path


from .baselines import BASELINES, build_model
from .checkpoint import Checkpoint
from .data import (
    AIR_COLUMNS,
    ALLOWED_TG,
    WEATHER_COLUMNS,
    AFCRecords,
    FlowCube,
    Recordings,
    align_exogenous,
    ingest_afc,
    synth_records,
)
from .data.exogenous import AIR_PERIOD_MIN, WEATHER_PERIOD_MIN
from .data.samples import Scaler
from .errors import ConfigError, DataError, MetroflowError
from .experiments import TG_ROWS, check_double_ingestion, run_ablation, tg_experiment
from .graph import read_topology, synth_topology, write_topology
from .gradsuite import SUITE, run_suite
from .model import VARIANTS, ResLSTM, make_variant
from .training import Dataset, TrainConfig, evaluate, prepare_dataset, train, write_loss_history

log = logging.getLogger("metroflow")

IO_EXIT = 5

DEFAULTS: dict = {
    "out": "metroflow_out",
    "data_dir": None,  # defaults to out
    "seed": 0,
    "variant": "full",
    "tg": 30,
    "n": 5,
    # synthesis
    "days": 25,
    "n_lines": 2,
    "stations_per_line": 5,
    "n_transfers": 2,
    "weather_effect": 0.3,
    "peak_rate": 4.0,
    "response_lag_minutes": 60,
    # training
    "epochs_max": 200,
    "batch_size": 32,
    "lr": None,
    "val_fraction": 0.2,
    "patience": 20,
    "filters": [32, 64],
    "exo_hidden": 128,
    "trunk_hidden": 128,
    "baseline_hidden": 100,
    # evaluation / experiments
    "checkpoint": None,  # defaults to <out>/checkpoint.npz
    "variants": list(VARIANTS),
    "tg_train_missing": True,
    "log_level": "WARNING",
}

FILES = {
    "edges": "topology_edges.csv",
    "lines": "topology_lines.csv",
    "afc": "afc.csv",
    "weather": "weather.csv",
    "air": "air_quality.csv",
    "truth": "truth.json",
}


def build_id() -> str:
    """Hash of the package sources, stable across runs of the same code."""
    h = hashlib.sha1()
    root = Path(__file__).resolve().parent
    for path in sorted(root.rglob("*.py")):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:12]


# -- configuration -------------------------------------------------------------------


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = dict(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {unknown}; known keys are {sorted(DEFAULTS)}")
        nested = [k for k, v in data.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"{path}: config must be flat, {nested} hold objects")
        cfg.update(data)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if cfg["tg"] not in ALLOWED_TG:
        raise ConfigError(f"tg must be one of {ALLOWED_TG}, got {cfg['tg']}")
    if cfg["data_dir"] is None:
        cfg["data_dir"] = cfg["out"]
    return cfg


def _train_config(cfg: dict, checkpoint_path: Path | None = None) -> TrainConfig:
    return TrainConfig(
        epochs_max=int(cfg["epochs_max"]),
        batch_size=int(cfg["batch_size"]),
        lr=cfg["lr"],
        val_fraction=float(cfg["val_fraction"]),
        patience=cfg["patience"],
        checkpoint_path=str(checkpoint_path) if checkpoint_path else None,
        seed=int(cfg["seed"]),
    )


def _spec_overrides(cfg: dict) -> dict:
    filters = cfg["filters"]
    if not isinstance(filters, (list, tuple)) or len(filters) != 2:
        raise ConfigError("filters must be a list of two integers")
    return {"filters": tuple(int(f) for f in filters), "exo_hidden": int(cfg["exo_hidden"]),
            "trunk_hidden": int(cfg["trunk_hidden"])}


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"missing {what}: {path} (run `metroflow synth` or point data_dir at the dataset)")
    return path


def _load_dataset(cfg: dict, tg: int, scaler: Scaler | None = None, n: int | None = None) -> Dataset:
    data = Path(cfg["data_dir"])
    graph = read_topology(_require(data / FILES["edges"], "topology edges"), _require(data / FILES["lines"], "line file"))
    records = AFCRecords.from_csv(_require(data / FILES["afc"], "AFC records"))
    cube = ingest_afc(records, graph, tg)
    return _dataset_from(cube, graph, cfg, scaler, n)


def _dataset_from(cube: FlowCube, graph, cfg: dict, scaler: Scaler | None = None, n: int | None = None) -> Dataset:
    data = Path(cfg["data_dir"])
    weather = Recordings.from_csv(_require(data / FILES["weather"], "weather recordings"), WEATHER_COLUMNS,
                                  WEATHER_PERIOD_MIN)
    air_path = data / FILES["air"]
    air = Recordings.from_csv(air_path, AIR_COLUMNS, AIR_PERIOD_MIN) if air_path.exists() else None
    exo = align_exogenous(weather, air, cube.tg_minutes, cube.calendar)
    return prepare_dataset(cube, exo, graph, int(n or cfg["n"]), float(cfg["val_fraction"]), scaler=scaler)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _echo(cfg: dict) -> dict:
    return {k: cfg[k] for k in sorted(cfg)}


# -- commands ------------------------------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    out = Path(cfg["out"])
    if int(cfg["days"]) <= 0:
        raise ConfigError(f"days must be positive, got {cfg['days']}")
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg["seed"])
    graph = synth_topology(int(cfg["n_lines"]), int(cfg["stations_per_line"]), int(cfg["n_transfers"]), seed)
    data = synth_records(graph, int(cfg["days"]), float(cfg["weather_effect"]), seed,
                         peak_rate=float(cfg["peak_rate"]), response_lag_minutes=int(cfg["response_lag_minutes"]))
    write_topology(graph, out / FILES["edges"], out / FILES["lines"])
    data.records.to_csv(out / FILES["afc"])
    data.weather.to_csv(out / FILES["weather"])
    data.air.to_csv(out / FILES["air"])
    tg = int(cfg["tg"])
    cube = ingest_afc(data.records, graph, tg, data.days)
    cube.write_csv(out / f"inflow_{tg}.csv", out / f"outflow_{tg}.csv")
    _write_json(out / FILES["truth"], {**data.truth, "tg_cached": tg, "config": _echo(cfg)})
    print(f"wrote {len(data.records)} records for {graph.n_stations} stations over {len(data.days)} days to {out}")
    return 0


def _build_trainable(cfg: dict, dataset: Dataset):
    variant, seed, s = cfg["variant"], int(cfg["seed"]), dataset.graph.n_stations
    if variant in VARIANTS:
        spec = make_variant(variant, s, n=dataset.n, seed=seed, **_spec_overrides(cfg))
        return "reslstm", spec.to_dict(), ResLSTM(spec), spec.lr
    if variant in BASELINES and variant != "historical_average":
        spec = {"kind": variant, "stations": s, "n": dataset.n, "hidden": int(cfg["baseline_hidden"]),
                "filters": list(cfg["filters"]), "seed": seed}
        model = build_model(variant, spec)
        return variant, spec, model, 0.0001
    raise ConfigError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS + BASELINES[1:])}")


def _train_into(cfg: dict, dataset: Dataset, out: Path):
    kind, spec, model, default_lr = _build_trainable(cfg, dataset)
    ckpt = Path(cfg["checkpoint"]) if cfg["checkpoint"] else out / "checkpoint.npz"
    result = train(model, dataset.train, dataset.val, _train_config(cfg, ckpt), kind=kind, spec=spec,
                   default_lr=default_lr)
    write_loss_history(result.history, out / "loss.csv")
    return model, result, ckpt


def cmd_train(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(cfg, int(cfg["tg"]))
    model, result, ckpt = _train_into(cfg, dataset, out)
    print(f"trained {cfg['variant']} ({model.num_parameters()} parameters) for {result.stopped_epoch} epochs; "
          f"best val MSE {result.best_val_mse:.6g} at epoch {result.best.epoch}; checkpoint {ckpt}")
    return 0


def _restore(path: Path):
    ck = Checkpoint.load(path)
    try:
        model = build_model(ck.kind, ck.spec)
        ck.restore(model)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: checkpoint spec is unusable ({exc})") from exc
    if ck.scaler is None:
        raise ConfigError(f"{path}: checkpoint carries no scaler state")
    return ck, model


def _evaluate_checkpoint(cfg: dict, ckpt: Path, tg: int):
    ck, model = _restore(ckpt)
    dataset = _load_dataset(cfg, tg, scaler=Scaler.from_state(ck.scaler), n=ck.spec["n"])
    if int(ck.spec["stations"]) != dataset.graph.n_stations:
        raise ConfigError(f"{ckpt} was trained on {ck.spec['stations']} stations, the dataset has "
                          f"{dataset.graph.n_stations}")
    return ck, evaluate(model, dataset.test, dataset.graph.stations)


def cmd_evaluate(cfg: dict) -> int:
    out = Path(cfg["out"])
    ckpt = Path(cfg["checkpoint"]) if cfg["checkpoint"] else out / "checkpoint.npz"
    ck, report = _evaluate_checkpoint(cfg, ckpt, int(cfg["tg"]))
    for k, v in report.metrics().items():
        if not math.isfinite(v):
            raise ConfigError(f"metric {k} is not finite")
    report.write_station_csvs(out / "stations")
    _write_json(out / "metrics.json", {
        **report.metrics(),
        "seed": ck.seed,
        "kind": ck.kind,
        "variant": ck.spec.get("variant", ck.kind),
        "best_epoch": ck.epoch,
        "n_test_points": int(report.actual.size),
        "config": _echo(cfg),
        "build_id": build_id(),
        "created": dt.datetime.now().isoformat(timespec="seconds"),
    })
    print(f"rmse {report.rmse:.4f}  mae {report.mae:.4f}  wmape {report.wmape:.4%}")
    return 0


def cmd_ablate(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    variants = tuple(cfg["variants"])
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variants {unknown}")
    dataset = _load_dataset(cfg, int(cfg["tg"]))
    rows = run_ablation(dataset, _train_config(cfg), variants, **_spec_overrides(cfg))
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "rmse", "mae", "wmape", "n_params", "epochs", "seed", "error"])
        for r in rows:
            w.writerow([r.variant, repr(r.rmse), repr(r.mae), repr(r.wmape), r.n_params, r.epochs, cfg["seed"], r.error])
    for r in rows:
        print(f"{r.variant:12s} rmse {r.rmse:9.4f} mae {r.mae:9.4f} wmape {r.wmape:8.4%} params {r.n_params}"
              + (f"  FAILED {r.error}" if r.error else ""))
    return 0 if all(not r.error for r in rows) else 1


def cmd_tg(cfg: dict) -> int:
    """Train (or reuse) one model per granularity and compare them on 30-minute blocks.

    Checkpoints live at ``<out>/tg_<TG>/checkpoint.npz``; with
    ``tg_train_missing`` false a missing checkpoint is an error.
    """
    out = Path(cfg["out"])
    data = Path(cfg["data_dir"])
    graph = read_topology(_require(data / FILES["edges"], "topology edges"), _require(data / FILES["lines"], "line file"))
    records = AFCRecords.from_csv(_require(data / FILES["afc"], "AFC records"))
    cubes = {tg: ingest_afc(records, graph, tg) for _, tg in TG_ROWS}
    check_double_ingestion(cubes)
    reports = {}
    for _, tg in TG_ROWS:
        tg_dir = out / f"tg_{tg}"
        ckpt = tg_dir / "checkpoint.npz"
        if not ckpt.exists():
            if not cfg["tg_train_missing"]:
                raise ConfigError(f"missing {tg}-min checkpoint: {ckpt}")
            tg_dir.mkdir(parents=True, exist_ok=True)
            dataset = _dataset_from(cubes[tg], graph, cfg)
            _train_into({**cfg, "checkpoint": str(ckpt)}, dataset, tg_dir)
        ck, model = _restore(ckpt)
        dataset = _dataset_from(cubes[tg], graph, cfg, Scaler.from_state(ck.scaler), ck.spec["n"])
        reports[tg] = evaluate(model, dataset.test, graph.stations)
    rows = tg_experiment(reports)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "tg.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tg", "rmse", "mae", "wmape", "n_points"])
        for r in rows:
            w.writerow([r.label, repr(r.rmse), repr(r.mae), repr(r.wmape), r.n_points])
    for r in rows:
        print(f"{r.label:5s} rmse {r.rmse:9.4f} mae {r.mae:9.4f} wmape {r.wmape:8.4%}")
    return 0


def cmd_gradcheck(cfg: dict, cases: dict | None = None) -> int:
    results = run_suite(SUITE if cases is None else cases, seed=int(cfg["seed"]))
    width = max(len(r.name) for r in results)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:{width}s}  max rel err {r.report.max_rel_error:.3e}  probes {r.report.n_checked:4d}  {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}")
        return 4
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "tg": cmd_tg,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metroflow", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", metavar="PATH", help="flat JSON config; flags take precedence")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", help=f"one of {', '.join(VARIANTS)} or a baseline name")
    p.add_argument("--tg", type=int, choices=ALLOWED_TG, help="time granularity in minutes")
    p.add_argument("--out", metavar="DIR", help="output directory (default metroflow_out)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "variant": args.variant, "tg": args.tg, "out": args.out})
        level = "INFO" if args.verbose else str(cfg["log_level"]).upper()
        logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](cfg)
    except MetroflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
