"""Loss and error metrics on the original count scale."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError, UndefinedMetricError
from .tensor import Tensor


def mse_loss(pred: Tensor, target) -> Tensor:
    target = T.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    return T.square(pred - target).mean()


def _pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(actual, dtype=float).reshape(-1)
    yhat = np.asarray(predicted, dtype=float).reshape(-1)
    if y.shape != yhat.shape:
        raise DimensionError(f"metric inputs differ in size: {y.size} vs {yhat.size}")
    if y.size == 0:
        raise UndefinedMetricError("metrics need at least one value")
    return y, yhat


def rmse(actual, predicted) -> float:
    y, yhat = _pair(actual, predicted)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mae(actual, predicted) -> float:
    y, yhat = _pair(actual, predicted)
    return float(np.mean(np.abs(y - yhat)))


def wmape(actual, predicted) -> float:
    """Weighted MAPE; the weights y_i / sum(y) cancel the per-point 1/y_i."""
    y, yhat = _pair(actual, predicted)
    total = y.sum()
    if total <= 0:
        raise UndefinedMetricError("WMAPE is undefined when the actual values sum to zero")
    return float(np.abs(y - yhat).sum() / total)


def all_metrics(actual, predicted) -> dict[str, float]:
    return {"rmse": rmse(actual, predicted), "mae": mae(actual, predicted), "wmape": wmape(actual, predicted)}
