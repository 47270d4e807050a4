"""Short-term metro inflow forecasting with a residual, graph-convolutional and attention-LSTM network.

The package carries its own numpy autodiff engine (:mod:`metroflow.tensor`),
so the only runtime dependencies are numpy and pandas.
"""

from .errors import ConfigError, DataError, MetroflowError, NumericError
from .graph import MetroGraph, build_graph, normalized_laplacian, synth_topology
from .metrics import mae, rmse, wmape
from .model import VARIANTS, ModelSpec, ResLSTM, make_variant
from .training import TrainConfig, evaluate, prepare_dataset, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "MetroflowError", "NumericError",
    "MetroGraph", "build_graph", "normalized_laplacian", "synth_topology",
    "mae", "rmse", "wmape",
    "VARIANTS", "ModelSpec", "ResLSTM", "make_variant",
    "TrainConfig", "evaluate", "prepare_dataset", "train",
]
