"""The four-branch residual/graph/recurrent forecaster and its ablation variants.

Every branch emits an ``n x s`` sequence (one s-wide feature vector per
history step) so that the fused result can drive the attention LSTM trunk.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .data.samples import SampleSet
from .errors import ConfigError, DimensionError
from .layers import (
    LSTM,
    Dense,
    Module,
    ResidualBlock,
    lstm_param_count,
    residual_block_param_count,
)
from .tensor import Tensor, parameter

VARIANTS = ("full", "gcn_only", "no_graph", "no_wa", "no_a", "two_channel")
N_WEATHER = 4
N_INDICATORS = 11


@dataclass(frozen=True)
class ModelSpec:
    stations: int
    n: int = 5
    inflow: bool = True
    outflow: bool = True
    graph: bool = True
    exogenous: bool = True
    two_channel: bool = False
    n_indicators: int = N_INDICATORS
    filters: tuple[int, int] = (32, 64)
    exo_hidden: int = 128
    trunk_hidden: int = 128
    lr: float = 0.001
    seed: int = 0
    variant: str = "full"

    def __post_init__(self):
        if self.stations < 1 or self.n < 1:
            raise ConfigError("stations and n must be positive")
        if not self.branch_names():
            raise ConfigError("at least one branch must be enabled")
        if min(self.filters) < 1 or self.exo_hidden < 1 or self.trunk_hidden < 1:
            raise ConfigError("layer widths must be positive")

    @property
    def dense_width(self) -> int:
        return self.stations

    def branch_names(self) -> list[str]:
        names = []
        if self.two_channel:
            names += ["realtime", "daily", "weekly"]
        else:
            names += [b for b in ("inflow", "outflow") if getattr(self, b)]
        names += [b for b in ("graph", "exogenous") if getattr(self, b)]
        return names

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["filters"] = tuple(d["filters"])
        return cls(**d)


def make_variant(name: str, stations: int, **overrides) -> ModelSpec:
    """Spec for the full model or one of its ablations.

    ``gcn_only`` keeps only the graph branch, ``no_graph`` and ``no_wa`` drop
    the graph and exogenous branches, ``no_a`` feeds the four weather
    indicators only, ``two_channel`` regroups the flows into one branch per
    pattern with inflow and outflow as channels.
    """
    toggles = {
        "full": {},
        "gcn_only": {"inflow": False, "outflow": False, "exogenous": False},
        "no_graph": {"graph": False},
        "no_wa": {"exogenous": False},
        "no_a": {"n_indicators": N_WEATHER},
        "two_channel": {"two_channel": True},
    }
    if name not in toggles:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return ModelSpec(stations=stations, variant=name, **{**toggles[name], **overrides})


# -- branches -------------------------------------------------------------------


class FlowBranch(Module):
    """Two residual blocks, then a dense map of each time column's features to s outputs."""

    def __init__(self, channels: int, spec: ModelSpec, rng: np.random.Generator):
        f1, f2 = spec.filters
        self.channels = channels
        self.block1 = ResidualBlock(channels, f1, rng)
        self.block2 = ResidualBlock(f1, f2, rng)
        self.dense = Dense(f2 * spec.stations, spec.dense_width, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"flow branch expects B x {self.channels} x s x n, got {x.shape}")
        y = self.block2(self.block1(x))  # B x f2 x s x n
        b, f, s, n = y.shape
        cols = y.transpose(0, 3, 1, 2).reshape(b, n, f * s)
        return self.dense(cols)  # B x n x s


class ExogenousBranch(Module):
    """Per-step dense re-weighting of the indicators, then two stacked LSTMs."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.n_indicators = spec.n_indicators
        self.dense = Dense(spec.n_indicators, spec.dense_width, rng)
        self.lstm1 = LSTM(spec.dense_width, spec.exo_hidden, rng)
        self.lstm2 = LSTM(spec.exo_hidden, spec.stations, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.n_indicators:
            raise DimensionError(f"exogenous branch expects B x {self.n_indicators} x n, got {x.shape}")
        seq = self.dense(x.transpose(0, 2, 1))
        return self.lstm2(self.lstm1(seq))


def attention(out: Tensor, scale: Tensor, shift: Tensor, score: Dense) -> tuple[Tensor, Tensor]:
    """Return ``(A * out, A)`` with ``A = sigmoid(score(scale * out + shift))``.

    ``scale`` and ``shift`` are shaped like one sample of ``out`` (steps x
    width); ``score`` is applied per step, so ``A`` has ``out``'s shape.
    """
    coeff = T.sigmoid(score(out * scale + shift))
    return T.hadamard(coeff, out), coeff


class AttentionLSTM(Module):
    def __init__(self, d_in: int, hidden: int, steps: int, rng: np.random.Generator):
        self.lstm = LSTM(d_in, hidden, rng)
        self.scale = parameter(np.ones((steps, hidden)))
        self.shift = parameter(np.zeros((steps, hidden)))
        self.score = Dense(hidden, hidden, rng)

    def forward(self, seq: Tensor) -> Tensor:
        return attention(self.lstm(seq), self.scale, self.shift, self.score)[0]


def fuse(outputs: list[Tensor], weights: list[Tensor]) -> Tensor:
    """Hadamard-weighted sum of branch outputs; weights broadcast over the batch axis."""
    if not outputs or len(outputs) != len(weights):
        raise DimensionError("fuse needs one weight tensor per branch output")
    total = None
    for o, w in zip(outputs, weights):
        if o.shape[-w.ndim :] != w.shape or o.shape != outputs[0].shape:
            raise DimensionError(f"fuse: branch output {o.shape} does not match weight {w.shape}")
        term = o * w
        total = term if total is None else total + term
    return total


class ResLSTM(Module):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        self.spec = spec
        self.branches: dict[str, Module] = {}
        self.fusion: dict[str, Tensor] = {}
        for name in spec.branch_names():
            if name == "exogenous":
                self.branches[name] = ExogenousBranch(spec, rng)
            else:
                channels = 2 if spec.two_channel and name in ("realtime", "daily", "weekly") else 3
                channels = 1 if name == "graph" else channels
                self.branches[name] = FlowBranch(channels, spec, rng)
            self.fusion[name] = parameter(rng.uniform(0.5, 1.5, size=(spec.n, spec.stations)))
        self.trunk = AttentionLSTM(spec.stations, spec.trunk_hidden, spec.n, rng)
        self.head = Dense(spec.n * spec.trunk_hidden, spec.stations, rng)

    def branch_inputs(self, batch: SampleSet) -> dict[str, Tensor]:
        spec = self.spec
        if batch.inflow.shape[2:] != (spec.stations, spec.n):
            raise DimensionError(f"batch windows are {batch.inflow.shape[2:]}, model expects {(spec.stations, spec.n)}")
        inputs = {}
        if spec.two_channel:
            for p, name in enumerate(("realtime", "daily", "weekly")):
                inputs[name] = Tensor(np.stack([batch.inflow[:, p], batch.outflow[:, p]], axis=1))
        else:
            inputs["inflow"] = Tensor(batch.inflow)
            inputs["outflow"] = Tensor(batch.outflow)
        inputs["graph"] = Tensor(batch.graph[:, None])
        if spec.exogenous:
            exo = batch.exogenous
            if exo.shape[1] < spec.n_indicators:
                raise DimensionError(f"batch has {exo.shape[1]} indicators, model expects {spec.n_indicators}")
            inputs["exogenous"] = Tensor(exo[:, : spec.n_indicators])
        return inputs

    def forward(self, batch: SampleSet | dict[str, Tensor]) -> Tensor:
        inputs = batch if isinstance(batch, dict) else self.branch_inputs(batch)
        names = list(self.branches)
        outputs = [self.branches[k](inputs[k]) for k in names]
        fused = fuse(outputs, [self.fusion[k] for k in names])
        attended = self.trunk(fused)  # B x n x hidden
        b = attended.shape[0]
        return self.head(attended.reshape(b, -1))


# -- parameter accounting --------------------------------------------------------


def flow_branch_param_count(spec: ModelSpec, channels: int) -> int:
    f1, f2 = spec.filters
    return (
        residual_block_param_count(channels, f1)
        + residual_block_param_count(f1, f2)
        + f2 * spec.stations * spec.dense_width + spec.dense_width
    )


def exogenous_branch_param_count(spec: ModelSpec) -> int:
    k, s, h = spec.n_indicators, spec.stations, spec.exo_hidden
    return (k * s + s) + lstm_param_count(s, h) + lstm_param_count(h, s)


def branch_param_counts(spec: ModelSpec) -> dict[str, int]:
    """Trainable parameters owned by each enabled branch, its fusion weight included."""
    fusion = spec.n * spec.stations
    counts = {}
    for name in spec.branch_names():
        if name == "exogenous":
            own = exogenous_branch_param_count(spec)
        elif name == "graph":
            own = flow_branch_param_count(spec, 1)
        else:
            own = flow_branch_param_count(spec, 2 if spec.two_channel else 3)
        counts[name] = own + fusion
    return counts


def trunk_param_count(spec: ModelSpec) -> int:
    h, s, n = spec.trunk_hidden, spec.stations, spec.n
    return lstm_param_count(s, h) + 2 * n * h + (h * h + h) + (n * h * s + s)


def expected_param_count(spec: ModelSpec) -> int:
    return sum(branch_param_counts(spec).values()) + trunk_param_count(spec)
