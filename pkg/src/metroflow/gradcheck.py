"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    worst: tuple[int, int] | None = None  # (input index, flat coordinate)
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare ``backward`` gradients of the scalar ``f()`` against central differences.

    ``f`` closes over ``inputs``; their ``.data`` arrays are perturbed in place
    and restored. ``max_coords`` caps the coordinates probed per input (chosen
    at random from ``rng``) for large parameter tensors. ``floor`` bounds the
    relative-error denominator from below so exact zeros compare sanely.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    for t in inputs:
        t.grad = None
    out = f()
    if out.size != 1:
        raise NumericError(f"gradient_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = rng or np.random.default_rng(0)
    worst_err, worst_at, checked = 0.0, None, 0
    per_input = []
    for k, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        input_worst = 0.0
        for idx in coords:
            orig = flat[idx]
            with no_grad():
                flat[idx] = orig + h
                fp = f().item()
                flat[idx] = orig - h
                fm = f().item()
            flat[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite function value probing input {k} coordinate {idx}")
            numeric = (fp - fm) / (2.0 * h)
            err = float(relative_error(np.array(analytic[k].reshape(-1)[idx]), np.array(numeric), floor))
            checked += 1
            if err > input_worst:
                input_worst = err
            if err > worst_err:
                worst_err, worst_at = err, (k, int(idx))
        per_input.append(input_worst)
    return GradCheckReport(worst_err, tol, checked, worst_at, per_input)
