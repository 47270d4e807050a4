"""Parameterised building blocks on top of :mod:`metroflow.tensor`."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import RunningStats, Tensor, parameter

# Recorded in checkpoints so a run can be reproduced without reading this file.
INIT_SCHEME = {
    "dense_conv": "uniform(+-sqrt(3/fan_in))",
    "recurrent": "uniform(+-0.08)",
    "bias": "zeros",
    "batch_norm": "gamma=1, beta=0",
    "fusion": "uniform(0.5, 1.5)",
}
RECURRENT_LIMIT = 0.08


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Container that discovers parameters and running stats through its attributes.

    Discovery follows attribute insertion order, so names and ordering are
    stable across runs.
    """

    training: bool = True

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        found: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                found[name] = value
            elif isinstance(value, Module):
                found.update(value.parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.update(item.parameters(f"{name}.{i}."))
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        found.update(item.parameters(f"{name}.{k}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        found[f"{name}.{k}"] = item
        return found

    def buffers(self, prefix: str = "") -> dict[str, RunningStats]:
        found: dict[str, RunningStats] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, RunningStats):
                found[name] = value
            elif isinstance(value, Module):
                found.update(value.buffers(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.update(item.buffers(f"{name}.{i}."))
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        found.update(item.buffers(f"{name}.{k}."))
        return found

    def submodules(self):
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                yield from (v for v in value if isinstance(v, Module))
            elif isinstance(value, dict):
                yield from (v for v in value.values() if isinstance(v, Module))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for m in self.submodules():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.W = parameter(fan_in_uniform(rng, (n_in, n_out), n_in))
        self.b = parameter(np.zeros(n_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.dense(x, self.W, self.b)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        fan_in = c_in * kernel * kernel
        self.K = parameter(fan_in_uniform(rng, (c_out, c_in, kernel, kernel), fan_in))
        self.b = parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.K, self.b)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.99, eps: float = 1e-5):
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.stats = RunningStats.fresh(channels, momentum)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.training, self.stats, self.eps)


class _Recurrent(Module):
    gates = 1

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        g = self.gates * hidden
        self.hidden = hidden
        self.W_x = parameter(rng.uniform(-RECURRENT_LIMIT, RECURRENT_LIMIT, size=(d_in, g)))
        self.W_h = parameter(rng.uniform(-RECURRENT_LIMIT, RECURRENT_LIMIT, size=(hidden, g)))
        self.b = parameter(np.zeros(g))

    @property
    def cell_params(self) -> dict[str, Tensor]:
        return {"W_x": self.W_x, "W_h": self.W_h, "b": self.b}


class LSTM(_Recurrent):
    """Single LSTM layer over ``B x n x d_in``; returns the full ``B x n x hidden`` sequence."""

    gates = 4

    def forward(self, seq: Tensor) -> Tensor:
        batch, steps, _ = seq.shape
        proj = T.dense(seq, self.W_x, self.b)
        h = T.Tensor(np.zeros((batch, self.hidden)))
        c = T.Tensor(np.zeros((batch, self.hidden)))
        outputs = []
        for t in range(steps):
            h, c = T.lstm_cell_projected(proj[:, t, :], h, c, self.W_h)
            outputs.append(h)
        return T.stack(outputs, axis=1)


class GRU(_Recurrent):
    gates = 3

    def forward(self, seq: Tensor) -> Tensor:
        h = T.Tensor(np.zeros((seq.shape[0], self.hidden)))
        outputs = []
        for t in range(seq.shape[1]):
            h = T.gru_cell(seq[:, t, :], h, self.cell_params)
            outputs.append(h)
        return T.stack(outputs, axis=1)


class SimpleRNN(_Recurrent):
    gates = 1

    def forward(self, seq: Tensor) -> Tensor:
        h = T.Tensor(np.zeros((seq.shape[0], self.hidden)))
        outputs = []
        for t in range(seq.shape[1]):
            h = T.rnn_cell(seq[:, t, :], h, self.cell_params)
            outputs.append(h)
        return T.stack(outputs, axis=1)


class ResidualBlock(Module):
    """Pre-activation residual block: ``x + conv(relu(bn(conv(relu(bn(x))))))``.

    The shortcut is a 1x1 convolution when the channel count changes.
    """

    def __init__(self, c_in: int, filters: int, rng: np.random.Generator, kernel: int = 3):
        self.bn1 = BatchNorm(c_in)
        self.conv1 = Conv2d(c_in, filters, kernel, rng)
        self.bn2 = BatchNorm(filters)
        self.conv2 = Conv2d(filters, filters, kernel, rng)
        self.shortcut = Conv2d(c_in, filters, 1, rng) if c_in != filters else None

    def forward(self, x: Tensor) -> Tensor:
        y = self.conv1(T.relu(self.bn1(x)))
        y = self.conv2(T.relu(self.bn2(y)))
        skip = x if self.shortcut is None else self.shortcut(x)
        return y + skip


def residual_block_param_count(c_in: int, filters: int, kernel: int = 3) -> int:
    count = 2 * c_in + (filters * c_in * kernel * kernel + filters)
    count += 2 * filters + (filters * filters * kernel * kernel + filters)
    if c_in != filters:
        count += filters * c_in + filters
    return count


def lstm_param_count(d_in: int, hidden: int) -> int:
    return 4 * hidden * (d_in + hidden) + 4 * hidden
