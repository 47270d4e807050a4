"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its parents and a closure that pushes the output
gradient back to them. ``Tensor.backward`` walks the recorded graph in
reverse topological order, so each node's closure runs exactly once and
fan-out contributions are summed before they propagate further.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, DimensionError, StateError

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE, copy=True) if not isinstance(data, np.ndarray) or data.dtype != DTYPE else data
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))  # raises for non-scalars

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff -----------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad.

        Without an explicit seed gradient, ``self`` must be a scalar.
        """
        if grad is None:
            if self.data.size != 1:
                raise StateError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise StateError("backward() called on a tensor that does not require grad")

        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.array(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b), lambda g: ((a, g), (b, g)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b), lambda g: ((a, g), (b, -g)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b), lambda g: ((a, g * b.data), (b, g * a.data)))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two tensors of identical shape (no broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "hadamard")
    return mul(a, b)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _result(out, (a, b), lambda g: ((a, g / b.data), (b, -g * out / b.data)))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: ((a, -g),))


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    return _result(
        a.data**exponent,
        (a,),
        lambda g: ((a, g * exponent * a.data ** (exponent - 1.0)),),
    )


def square(a: Tensor) -> Tensor:
    return _result(a.data * a.data, (a,), lambda g: ((a, 2.0 * g * a.data),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: ((a, g * out),))


# -- activations --------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: ((a, g * mask),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: ((a, g * out * (1.0 - out)),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: ((a, g * (1.0 - out * out)),))


# -- reductions and shape manipulation ----------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.shape)),)

    return _result(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(a.shape)),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: ((a, np.transpose(g, inverse)),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    fancy = _is_fancy(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return ((a, full),)

    return _result(np.array(out), (a,), backward)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(zip(tensors, np.split(g, cuts, axis=axis)))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple((t, np.take(g, i, axis=axis)) for i, t in enumerate(tensors))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching rules on leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, ga), (b, gb))

    return _result(a.data @ b.data, (a, b), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` along the last axis of ``x``."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"dense: input extent {x.shape[-1]} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, x.shape[-1])
    out = flat @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[1],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        grads = [(x, (g2 @ weight.data.T).reshape(x.shape)), (weight, flat.T @ g2)]
        if bias is not None:
            grads.append((bias, g2.sum(axis=0)))
        return grads

    return _result(out, parents, backward)


# -- convolution ----------------------------------------------------------------


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero "same" padding.

    ``x`` is ``N x C_in x H x W`` (or unbatched ``C_in x H x W``), ``kernels``
    is ``C_out x C_in x k x k`` with odd ``k``.
    """
    x = as_tensor(x)
    if x.ndim == 3:
        out = conv2d(reshape(x, (1,) + x.shape), kernels, bias)
        return reshape(out, out.shape[1:])
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d input and kernels, got {x.shape} and {kernels.shape}")
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = kernels.shape
    if c != c_in:
        raise DimensionError(f"conv2d: input has {c} channels, kernels expect {c_in} ({x.shape} vs {kernels.shape})")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    cols = _im2col(x.data, kh, kw)
    kmat = kernels.data.transpose(0, 2, 3, 1).reshape(c_out, -1)
    out = (cols @ kmat.T).reshape(n, h, w, c_out).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h * w, c_out)
        grads = [(kernels, (g2.T @ cols).reshape(c_out, kh, kw, c).transpose(0, 3, 1, 2))]
        if bias is not None:
            grads.append((bias, g.sum(axis=(0, 2, 3))))
        if x.requires_grad:
            # Stride 1 with same padding: the input gradient is the output
            # gradient correlated with spatially flipped, channel-swapped kernels.
            flipped = kernels.data[:, :, ::-1, ::-1].transpose(1, 2, 3, 0).reshape(c, -1)
            gcols = _im2col(g, kh, kw)
            grads.append((x, (gcols @ flipped.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)))
        return grads

    return _result(np.ascontiguousarray(out), parents, backward)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Rows are output pixels (n, y, x); columns are (ky, kx, channel) patches."""
    n, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # n, h, w, c, kh, kw
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * c)


# -- normalization ----------------------------------------------------------------


@dataclass
class RunningStats:
    """Momentum-averaged per-channel statistics used by batch norm in eval mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.99

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.99) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels), momentum)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        m = self.momentum
        self.mean = m * self.mean + (1.0 - m) * batch_mean
        self.var = m * self.var + (1.0 - m) * batch_var


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool = True,
    running: RunningStats | None = None,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    Accepts ``N x C`` or ``N x C x H x W``. In training mode the batch
    statistics are used (and folded into ``running`` when given); in eval
    mode ``running`` supplies them.
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[0] == 0:
        raise DataError(f"batch_norm: needs a non-empty batch, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}")
    if eps <= 0:
        raise DataError("batch_norm: eps must be positive")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    g_b = gamma.data.reshape(bshape)

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running is not None:
            running.update(mu, var)
    else:
        if running is None:
            raise StateError("batch_norm: eval mode requires running statistics")
        mu, var = running.mean, running.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = g_b * xhat + beta.data.reshape(bshape)
    m = x.size // c

    def backward(g):
        grads = [(gamma, (g * xhat).sum(axis=axes)), (beta, g.sum(axis=axes))]
        if x.requires_grad:
            dxhat = g * g_b
            if training:
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                dx = (inv_std.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                dx = dxhat * inv_std.reshape(bshape)
            grads.append((x, dx))
        return grads

    return _result(out, (x, gamma, beta), backward)


# -- recurrent cells --------------------------------------------------------------


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """One LSTM step; gate blocks in ``W_x``/``W_h``/``b`` are ordered input, forget, candidate, output.

    ``params`` holds ``W_x`` (d_in x 4h), ``W_h`` (h x 4h) and ``b`` (4h).
    Layers that project a whole sequence up front call
    :func:`lstm_cell_projected` directly.
    """
    wx, wh = params["W_x"], params["W_h"]
    hidden = wh.shape[0]
    if x.shape[-1] != wx.shape[0] or wx.shape[1] != 4 * hidden or h_prev.shape[-1] != hidden:
        raise DimensionError(
            f"lstm_cell: inconsistent shapes x={x.shape} h={h_prev.shape} W_x={wx.shape} W_h={wh.shape}"
        )
    return lstm_cell_projected(dense(x, wx, params["b"]), h_prev, c_prev, wh)


def lstm_cell_projected(x_proj: Tensor, h_prev: Tensor, c_prev: Tensor, w_h: Tensor) -> tuple[Tensor, Tensor]:
    hidden = w_h.shape[0]
    z = x_proj + matmul(h_prev, w_h)
    i = sigmoid(z[..., 0:hidden])
    f = sigmoid(z[..., hidden : 2 * hidden])
    cand = tanh(z[..., 2 * hidden : 3 * hidden])
    o = sigmoid(z[..., 3 * hidden : 4 * hidden])
    c = f * c_prev + i * cand
    h = o * tanh(c)
    return h, c


def gru_cell(x: Tensor, h_prev: Tensor, params: dict[str, Tensor]) -> Tensor:
    """One GRU step; gate blocks ordered update, reset, candidate."""
    wx, wh, b = params["W_x"], params["W_h"], params["b"]
    hidden = wh.shape[0]
    if x.shape[-1] != wx.shape[0] or wx.shape[1] != 3 * hidden:
        raise DimensionError(f"gru_cell: inconsistent shapes x={x.shape} W_x={wx.shape} W_h={wh.shape}")
    xp = dense(x, wx, b)
    hz = matmul(h_prev, wh[:, 0 : 2 * hidden])
    u = sigmoid(xp[..., 0:hidden] + hz[..., 0:hidden])
    r = sigmoid(xp[..., hidden : 2 * hidden] + hz[..., hidden : 2 * hidden])
    cand = tanh(xp[..., 2 * hidden :] + matmul(r * h_prev, wh[:, 2 * hidden :]))
    return u * h_prev + (1.0 - u) * cand


def rnn_cell(x: Tensor, h_prev: Tensor, params: dict[str, Tensor]) -> Tensor:
    wx, wh, b = params["W_x"], params["W_h"], params["b"]
    if x.shape[-1] != wx.shape[0] or wx.shape[1] != wh.shape[0]:
        raise DimensionError(f"rnn_cell: inconsistent shapes x={x.shape} W_x={wx.shape} W_h={wh.shape}")
    return tanh(dense(x, wx, b) + matmul(h_prev, wh))
