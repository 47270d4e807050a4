"""The gradient-check suite behind ``metroflow gradcheck``.

Each case builds a scalar function of some tensors from a seeded generator.
The scalar is a fixed random projection of the op's output, so every
output coordinate contributes a distinct weight to the gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .gradcheck import GradCheckReport, gradient_check
from .layers import LSTM, ResidualBlock
from .model import AttentionLSTM, ResLSTM, fuse, make_variant
from .tensor import Tensor, parameter

PROBES = 10
H = 1e-5
TOL = 1e-4
FLOOR = 1e-8
# Deep inside the full model some parameters (e.g. the exogenous LSTMs'
# recurrent weights) have gradients near 1e-8, where the central
# difference's float64 round-off (about 1e-11 here) dominates a 1e-8 floor.
FLOORS = {"full_forward": 1e-6}

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    w = Tensor(rng.normal(size=out.shape))
    return lambda y: T.tsum(y * w)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


def cancelled_by_batch_norm(name: str) -> bool:
    """The first conv bias of a residual block feeds a batch norm, which subtracts it again.

    Its gradient is exactly zero, so a relative error against a finite
    difference would only measure round-off.
    """
    return name == "conv1.b" or name.endswith(".conv1.b")


def _checked(module) -> list[Tensor]:
    return [p for k, p in module.parameters().items() if not cancelled_by_batch_norm(k)]


def _case(build):
    """Wrap ``build(rng) -> (forward, inputs)`` so the projection is drawn once."""

    def case(rng):
        forward, inputs = build(rng)
        project = _project(forward(), rng)
        return (lambda: project(forward())), inputs

    return case


@_case
def _matmul(rng):
    a, b = parameter(rng.normal(size=(4, 3))), parameter(rng.normal(size=(3, 5)))
    return (lambda: a @ b), [a, b]


@_case
def _hadamard(rng):
    a, b = parameter(rng.normal(size=(3, 4))), parameter(rng.normal(size=(3, 4)))
    return (lambda: T.hadamard(a, b)), [a, b]


@_case
def _elementwise(rng):
    a = parameter(_away_from_zero(rng, (3, 4)))
    b = parameter(rng.uniform(0.5, 2.0, size=(4,)))
    return (lambda: T.relu(a) + T.sigmoid(a) * T.tanh(a) - T.exp(a) / b + (b ** 3)), [a, b]


@_case
def _shape_ops(rng):
    a = parameter(rng.normal(size=(2, 3, 4)))
    b = parameter(rng.normal(size=(2, 3, 4)))

    def f():
        cat = T.concat([a, b], axis=1)
        st = T.stack([a, b], axis=0).transpose(1, 0, 2, 3).reshape(2, -1)
        return T.mean(cat, axis=2) * 2.0 + T.tsum(st[:, ::3], axis=1, keepdims=True) + T.concat([a[:, [0, 0, 2], 1], b[:, 1:, -1], a[:, :1, 0]], axis=1)

    return f, [a, b]


@_case
def _dense(rng):
    x = parameter(rng.normal(size=(5, 3, 4)))
    w, b = parameter(rng.normal(size=(4, 6))), parameter(rng.normal(size=6))
    return (lambda: T.dense(x, w, b)), [x, w, b]


@_case
def _conv2d(rng):
    x = parameter(rng.normal(size=(2, 3, 5, 4)))
    k, b = parameter(rng.normal(size=(4, 3, 3, 3))), parameter(rng.normal(size=4))
    return (lambda: T.conv2d(x, k, b)), [x, k, b]


@_case
def _batch_norm(rng):
    x = parameter(rng.normal(size=(4, 3, 2, 5)))
    gamma, beta = parameter(rng.uniform(0.5, 1.5, size=3)), parameter(rng.normal(size=3))
    return (lambda: T.batch_norm(x, gamma, beta, training=True)), [x, gamma, beta]


@_case
def _lstm_cell(rng):
    d, h = 3, 4
    x, hp, cp = (parameter(rng.normal(size=(2, k))) for k in (d, h, h))
    p = {"W_x": parameter(rng.normal(size=(d, 4 * h))), "W_h": parameter(rng.normal(size=(h, 4 * h))),
         "b": parameter(rng.normal(size=4 * h))}

    def f():
        hn, cn = T.lstm_cell(x, hp, cp, p)
        return T.concat([hn, cn], axis=1)

    return f, [x, hp, cp, *p.values()]


@_case
def _gru_cell(rng):
    d, h = 3, 4
    x, hp = parameter(rng.normal(size=(2, d))), parameter(rng.normal(size=(2, h)))
    p = {"W_x": parameter(rng.normal(size=(d, 3 * h))), "W_h": parameter(rng.normal(size=(h, 3 * h))),
         "b": parameter(rng.normal(size=3 * h))}
    return (lambda: T.gru_cell(x, hp, p)), [x, hp, *p.values()]


@_case
def _rnn_cell(rng):
    d, h = 3, 4
    x, hp = parameter(rng.normal(size=(2, d))), parameter(rng.normal(size=(2, h)))
    p = {"W_x": parameter(rng.normal(size=(d, h))), "W_h": parameter(rng.normal(size=(h, h))),
         "b": parameter(rng.normal(size=h))}
    return (lambda: T.rnn_cell(x, hp, p)), [x, hp, *p.values()]


@_case
def _residual_block(rng):
    block = ResidualBlock(2, 3, rng)
    x = parameter(rng.normal(size=(3, 2, 4, 5)))
    return (lambda: block(x)), [x, *_checked(block)]


@_case
def _lstm_layer(rng):
    layer = LSTM(3, 4, rng)
    x = parameter(rng.normal(size=(2, 5, 3)))
    return (lambda: layer(x)), [x, *layer.parameters().values()]


@_case
def _attention_lstm(rng):
    trunk = AttentionLSTM(3, 4, 5, rng)
    x = parameter(rng.normal(size=(2, 5, 3)))
    return (lambda: trunk(x)), [x, *trunk.parameters().values()]


@_case
def _fuse(rng):
    outs = [parameter(rng.normal(size=(3, 5, 4))) for _ in range(3)]
    ws = [parameter(rng.normal(size=(5, 4))) for _ in range(3)]
    return (lambda: fuse(outs, ws)), [*outs, *ws]


@_case
def _full_forward(rng):
    s, n = 4, 3
    spec = make_variant("full", s, n=n, filters=(2, 3), exo_hidden=4, trunk_hidden=5)
    model = ResLSTM(spec, rng)
    b = 3
    inputs = {
        "inflow": parameter(rng.uniform(size=(b, 3, s, n))),
        "outflow": parameter(rng.uniform(size=(b, 3, s, n))),
        "graph": parameter(rng.uniform(size=(b, 1, s, n))),
        "exogenous": parameter(rng.uniform(size=(b, spec.n_indicators, n))),
    }
    return (lambda: model(inputs)), [*inputs.values(), *_checked(model)]


SUITE: dict[str, Case] = {
    "matmul": _matmul,
    "hadamard": _hadamard,
    "elementwise": _elementwise,
    "shape_ops": _shape_ops,
    "dense": _dense,
    "conv2d": _conv2d,
    "batch_norm": _batch_norm,
    "lstm_cell": _lstm_cell,
    "gru_cell": _gru_cell,
    "rnn_cell": _rnn_cell,
    "residual_block": _residual_block,
    "lstm": _lstm_layer,
    "attention_lstm": _attention_lstm,
    "fuse": _fuse,
    "full_forward": _full_forward,
}


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed


def run_suite(cases: dict[str, Case] | None = None, seed: int = 0, probes: int = PROBES,
              h: float = H, tol: float = TOL) -> list[SuiteResult]:
    """Check every case with ``probes`` random coordinates per input tensor."""
    results = []
    for k, (name, case) in enumerate((SUITE if cases is None else cases).items()):
        rng = np.random.default_rng([seed, k])
        t0 = time.perf_counter()
        f, inputs = case(rng)
        report = gradient_check(f, inputs, h=h, tol=tol, max_coords=probes, rng=rng,
                                floor=FLOORS.get(name, FLOOR))
        results.append(SuiteResult(name, report, time.perf_counter() - t0))
    return results
