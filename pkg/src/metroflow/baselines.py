"""Comparison models and a factory that rebuilds any model from its checkpoint spec."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .data.samples import SampleSet
from .errors import ConfigError
from .layers import GRU, LSTM, Conv2d, Dense, Module, SimpleRNN
from .model import ModelSpec, ResLSTM
from .tensor import Tensor
from .training import Dataset, MetricsReport, TrainConfig, evaluate, report_from_predictions, train

BASELINES = ("historical_average", "bpnn", "rnn", "lstm", "gru", "cnn")
BASELINE_LR = 0.0001


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    stations: int
    n: int = 5
    hidden: int = 100
    filters: tuple[int, int] = (32, 64)
    lr: float = BASELINE_LR
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        return d


class BPNN(Module):
    """Two hidden ReLU layers on the flattened real-time inflow window."""

    def __init__(self, spec: BaselineSpec, rng: np.random.Generator):
        self.l1 = Dense(spec.stations * spec.n, spec.hidden, rng)
        self.l2 = Dense(spec.hidden, spec.hidden, rng)
        self.out = Dense(spec.hidden, spec.stations, rng)

    def forward(self, batch: SampleSet) -> Tensor:
        x = Tensor(batch.inflow[:, 0].reshape(len(batch), -1))
        return self.out(T.relu(self.l2(T.relu(self.l1(x)))))


class RecurrentBaseline(Module):
    """Two stacked recurrent layers over the network-wide inflow sequence; last state to a dense head."""

    cells = {"rnn": SimpleRNN, "lstm": LSTM, "gru": GRU}

    def __init__(self, spec: BaselineSpec, rng: np.random.Generator):
        cell = self.cells[spec.kind]
        self.r1 = cell(spec.stations, spec.hidden, rng)
        self.r2 = cell(spec.hidden, spec.hidden, rng)
        self.out = Dense(spec.hidden, spec.stations, rng)

    def forward(self, batch: SampleSet) -> Tensor:
        seq = Tensor(batch.inflow[:, 0].transpose(0, 2, 1))  # B x n x s
        h = self.r2(self.r1(seq))
        return self.out(h[:, -1, :])


class CNNBaseline(Module):
    """Two 3x3 ReLU convolutions over the three-pattern inflow image."""

    def __init__(self, spec: BaselineSpec, rng: np.random.Generator):
        f1, f2 = spec.filters
        self.c1 = Conv2d(3, f1, 3, rng)
        self.c2 = Conv2d(f1, f2, 3, rng)
        self.out = Dense(f2 * spec.stations * spec.n, spec.stations, rng)

    def forward(self, batch: SampleSet) -> Tensor:
        y = T.relu(self.c2(T.relu(self.c1(Tensor(batch.inflow)))))
        return self.out(y.reshape(len(batch), -1))


def build_model(kind: str, spec: dict) -> Module:
    """Instantiate a model from the ``kind``/``spec`` pair stored in checkpoints."""
    if kind == "reslstm":
        s = ModelSpec.from_dict(spec)
        return ResLSTM(s, np.random.default_rng(s.seed))
    if kind not in BASELINES or kind == "historical_average":
        raise ConfigError(f"unknown model kind {kind!r}")
    s = BaselineSpec(**{**spec, "filters": tuple(spec.get("filters", (32, 64)))})
    rng = np.random.default_rng(s.seed)
    if kind == "bpnn":
        return BPNN(s, rng)
    if kind == "cnn":
        return CNNBaseline(s, rng)
    return RecurrentBaseline(s, rng)


def historical_average(dataset: Dataset, samples: SampleSet) -> np.ndarray:
    """Scaled predictions: mean inflow of the same slot over the training workdays."""
    spd = dataset.cube.calendar.slots_per_day
    days = np.array(dataset.split.train)
    profile = np.stack([dataset.cube.inflow[:, d * spd : (d + 1) * spd] for d in days]).mean(axis=0)  # s x spd
    return dataset.scaler.inflow.transform(profile[:, samples.slot].T)


def baseline(name: str, dataset: Dataset, config: TrainConfig) -> MetricsReport:
    if name not in BASELINES:
        raise ConfigError(f"unknown baseline {name!r}; choose from {', '.join(BASELINES)}")
    stations = dataset.graph.stations
    if name == "historical_average":
        return report_from_predictions(dataset.test, historical_average(dataset, dataset.test), stations)
    spec = BaselineSpec(name, len(stations), dataset.n, seed=config.seed)
    model = build_model(name, spec.to_dict())
    result = train(model, dataset.train, dataset.val, config, kind=name, spec=spec.to_dict(), default_lr=spec.lr)
    return evaluate(model, dataset.test, stations, result.history)
