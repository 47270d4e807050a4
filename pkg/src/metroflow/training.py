"""Chronological splitting, the Adam/early-stopping training loop, and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .data.calendar import WEEKLY_OFFSET
from .data.exogenous import ExogenousSeries
from .data.flows import FlowCube
from .data.samples import SampleSet, Scaler, build_samples, fit_scaler, invert_scaler
from .errors import ConfigError, DimensionError, NumericError
from .graph import MetroGraph
from .layers import Module
from .metrics import all_metrics, mse_loss
from .optim import Adam

log = logging.getLogger(__name__)

WORKWEEK = 5


@dataclass(frozen=True)
class DaySplit:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]


def split_days(n_days: int, val_fraction: float = 0.2, test_days: int = WORKWEEK) -> DaySplit:
    """Last workweek for testing; the chronological tail of the rest for validation."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"validation fraction must lie in (0, 1), got {val_fraction}")
    if n_days < 2 * WORKWEEK or n_days <= test_days:
        raise ConfigError(f"need at least two workweeks of data, got {n_days} days")
    rest = n_days - test_days
    n_val = max(1, int(round(rest * val_fraction)))
    if n_val >= rest:
        raise ConfigError("validation split leaves no training days")
    days = list(range(n_days))
    return DaySplit(tuple(days[: rest - n_val]), tuple(days[rest - n_val : rest]), tuple(days[rest:]))


@dataclass(eq=False)
class Dataset:
    graph: MetroGraph
    cube: FlowCube
    exo: ExogenousSeries
    scaler: Scaler
    split: DaySplit
    train: SampleSet
    val: SampleSet
    test: SampleSet

    @property
    def n(self) -> int:
        return self.train.n_steps


def prepare_dataset(
    cube: FlowCube,
    exo: ExogenousSeries,
    graph: MetroGraph,
    n: int = 5,
    val_fraction: float = 0.2,
    test_days: int = WORKWEEK,
    scaler: Scaler | None = None,
) -> Dataset:
    """Split by day, scale (fitting on training days unless ``scaler`` is given) and window."""
    split = split_days(cube.calendar.n_days, val_fraction, test_days)
    scaler = scaler if scaler is not None else fit_scaler(cube, exo, split.train)
    samples = build_samples(cube, exo, graph, n, scaler)
    parts = [samples.on_days(days) for days in (split.train, split.val, split.test)]
    if len(parts[0]) == 0:
        raise ConfigError(
            f"no training samples: the first {WEEKLY_OFFSET} workdays only provide weekly history "
            f"and the training range is days {split.train[0]}..{split.train[-1]}"
        )
    return Dataset(graph, cube, exo, scaler, split, *parts)


@dataclass
class TrainConfig:
    epochs_max: int = 200
    batch_size: int = 32
    lr: float | None = None  # None: the model's own default
    val_fraction: float = 0.2
    patience: int | None = 20  # None: never stop early
    checkpoint_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1 or self.epochs_max < 1:
            raise ConfigError("batch_size and epochs_max must be positive")


@dataclass
class TrainResult:
    best: Checkpoint
    history: list[tuple[int, float, float]]
    stopped_epoch: int

    @property
    def best_val_mse(self) -> float:
        return self.best.val_mse


def predict(model: Module, samples: SampleSet, batch_size: int = 256) -> np.ndarray:
    """Scaled-domain predictions in eval mode."""
    model.eval()
    out = []
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            out.append(model(samples.subset(np.arange(start, min(start + batch_size, len(samples))))).data)
    return np.concatenate(out) if out else np.zeros((0, samples.n_stations))


def _mse(model: Module, samples: SampleSet) -> float:
    return float(np.mean((predict(model, samples) - samples.target) ** 2))


def train(
    model: Module,
    train_set: SampleSet,
    val_set: SampleSet,
    config: TrainConfig,
    kind: str = "reslstm",
    spec: dict | None = None,
    default_lr: float = 0.001,
    on_epoch: Callable[[int, float, float], bool] | None = None,
) -> TrainResult:
    """Mini-batch Adam on MSE with best-validation checkpointing and early stopping.

    The best checkpoint is restored into ``model`` before returning.
    ``on_epoch(epoch, train_mse, val_mse)`` may return True to stop.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training needs non-empty train and validation sets")
    lr = default_lr if config.lr is None else config.lr
    params = model.parameters()
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(config.seed)
    spec = spec or {}
    history: list[tuple[int, float, float]] = []
    best: Checkpoint | None = None
    wait = 0
    epoch = 0
    for epoch in range(1, config.epochs_max + 1):
        model.train()
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = train_set.subset(order[start : start + config.batch_size])
            opt.zero_grad()
            loss = mse_loss(model(batch), batch.target)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += value * len(batch)
        train_mse = total / len(order)
        val_mse = _mse(model, val_set)
        if not math.isfinite(val_mse):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.append((epoch, train_mse, val_mse))
        log.debug("epoch %d train %.6g val %.6g", epoch, train_mse, val_mse)
        if best is None or val_mse < best.val_mse:
            best = Checkpoint.capture(model, kind, spec, opt.state, seed=config.seed, epoch=epoch,
                                      val_mse=val_mse, scaler=train_set.scaler.state())
            wait = 0
        else:
            wait += 1
        if on_epoch is not None and on_epoch(epoch, train_mse, val_mse):
            break
        if config.patience is not None and wait >= config.patience:
            break
    best.restore(model)
    if config.checkpoint_path:
        best.save(Path(config.checkpoint_path))
    return TrainResult(best, history, epoch)


@dataclass
class MetricsReport:
    rmse: float
    mae: float
    wmape: float
    stations: tuple[str, ...]
    timestamps: np.ndarray
    actual: np.ndarray
    predicted: np.ndarray
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def metrics(self) -> dict[str, float]:
        return {"rmse": self.rmse, "mae": self.mae, "wmape": self.wmape}

    def write_station_csvs(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stamps = np.datetime_as_string(self.timestamps, unit="m")
        for j, station in enumerate(self.stations):
            with open(out_dir / f"{station}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["timestamp", "actual", "predicted"])
                for ts, a, p in zip(stamps, self.actual[:, j], self.predicted[:, j]):
                    w.writerow([ts, int(a), repr(float(p))])


def report_from_predictions(samples: SampleSet, scaled_pred: np.ndarray, stations, history=None) -> MetricsReport:
    """Invert scaling, clip at zero, and score against the raw counts."""
    if scaled_pred.shape != samples.target.shape:
        raise ConfigError(f"predictions {scaled_pred.shape} do not match test targets {samples.target.shape}")
    predicted = np.clip(invert_scaler(samples.scaler, scaled_pred), 0.0, None)
    m = all_metrics(samples.target_counts, predicted)
    return MetricsReport(m["rmse"], m["mae"], m["wmape"], tuple(stations), samples.timestamps(),
                         samples.target_counts.copy(), predicted, list(history or []))


def evaluate(model: Module, test_set: SampleSet, stations, history=None) -> MetricsReport:
    if len(test_set) == 0:
        raise ConfigError("empty test set")
    try:
        pred = predict(model, test_set)
    except DimensionError as exc:
        raise ConfigError(f"checkpoint does not fit the dataset: {exc}") from exc
    return report_from_predictions(test_set, pred, stations, history)


def write_loss_history(history: list[tuple[int, float, float]], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, tr, va in history:
            w.writerow([epoch, repr(tr), repr(va)])
