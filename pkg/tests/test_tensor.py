import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metroflow import tensor as T
from metroflow.errors import DimensionError, NumericError
from metroflow.gradcheck import gradient_check
from metroflow.layers import Dense
from metroflow.optim import Adam, AdamState, adam_step
from metroflow.tensor import RunningStats, Tensor, no_grad, parameter


def p(x):
    return parameter(np.asarray(x, dtype=float))


# -- forward oracles --------------------------------------------------------------


def test_matmul_identity_and_hand_case():
    m = np.array([[1.5, -2.0], [0.25, 4.0]])
    assert np.array_equal((Tensor(np.eye(2)) @ Tensor(m)).data, m)
    out = Tensor([[1, 2], [3, 4]]) @ Tensor([[0], [1]])
    assert np.array_equal(out.data, [[2], [4]])


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_conv2d_zero_kernel_gives_zero():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 5, 4)))
    out = T.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), Tensor(np.zeros(3)))
    assert out.shape == (3, 5, 4)
    assert not out.data.any()


def test_conv2d_ones_counts_neighbours():
    out = T.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
    expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=float)
    assert np.array_equal(out.data[0], expected)


def test_conv2d_delta_kernel_is_identity():
    x = np.random.default_rng(1).normal(size=(1, 4, 6))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    assert np.array_equal(T.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1))).data, x)


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(2)
    x, k, b = rng.normal(size=(2, 3, 5, 4)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    pad = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 5, 4))
    for i in range(5):
        for j in range(4):
            ref[:, :, i, j] = np.einsum("ncij,ocij->no", pad[:, :, i : i + 3, j : j + 3], k) + b
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(k), Tensor(b)).data, ref, rtol=0, atol=1e-12)


def test_batch_norm_standardized_input_passes_through():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(64, 2, 3, 3))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = T.batch_norm(Tensor(x), p(np.ones(2)), p(np.zeros(2)))
    np.testing.assert_allclose(out.data, x, atol=1e-3)


def test_batch_norm_zero_gamma_and_constant_channel():
    x = np.random.default_rng(4).normal(size=(8, 3))
    beta = np.array([0.5, -1.0, 2.0])
    out = T.batch_norm(Tensor(x), p(np.zeros(3)), p(beta))
    assert np.array_equal(out.data, np.broadcast_to(beta, x.shape))
    const = T.batch_norm(Tensor(np.full((5, 2), 7.0)), p(np.ones(2)), p(np.zeros(2)))
    assert np.array_equal(const.data, np.zeros((5, 2)))


def test_batch_norm_eval_uses_running_stats():
    stats = RunningStats.fresh(2)
    x = np.random.default_rng(5).normal(3.0, 2.0, size=(50, 2))
    T.batch_norm(Tensor(x), p(np.ones(2)), p(np.zeros(2)), training=True, running=stats)
    np.testing.assert_allclose(stats.mean, 0.01 * x.mean(axis=0))
    np.testing.assert_allclose(stats.var, 0.99 + 0.01 * x.var(axis=0))
    out = T.batch_norm(Tensor(x), p(np.ones(2)), p(np.zeros(2)), training=False, running=stats)
    np.testing.assert_allclose(out.data, (x - stats.mean) / np.sqrt(stats.var + 1e-5))


def test_activations():
    assert np.array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.tanh(Tensor(0.0)).item() == 0.0
    big = T.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(big)) and big[0] == 0.0 and big[1] == 1.0


def test_hadamard():
    a = Tensor([[1.5, -2.0], [3.0, 0.5]])
    assert np.array_equal(T.hadamard(a, Tensor(np.ones((2, 2)))).data, a.data)
    assert np.array_equal(T.hadamard(Tensor([2.0, 3.0]), Tensor([4.0, 5.0])).data, [8, 15])
    assert not T.hadamard(a, Tensor(np.zeros((2, 2)))).data.any()
    with pytest.raises(DimensionError):
        T.hadamard(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_dense():
    x = Tensor(np.random.default_rng(6).normal(size=(4, 3)))
    assert np.array_equal(T.dense(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)
    assert T.dense(Tensor([1.0, 1.0]), Tensor([[1.0], [1.0]]), Tensor([0.5])).data.tolist() == [2.5]
    with pytest.raises(DimensionError):
        T.dense(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 2))), Tensor(np.zeros(2)))


def _lstm_params(rng, d, h, scale=1.0):
    return {"W_x": p(scale * rng.normal(size=(d, 4 * h))), "W_h": p(scale * rng.normal(size=(h, 4 * h))),
            "b": p(scale * rng.normal(size=4 * h))}


def test_lstm_cell_zero_parameters_fixed_point():
    rng = np.random.default_rng(7)
    params = {k: p(np.zeros_like(v.data)) for k, v in _lstm_params(rng, 3, 4).items()}
    h, c = T.lstm_cell(Tensor(rng.normal(size=(2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))), params)
    assert not h.data.any() and not c.data.any()


def test_lstm_cell_saturated_forget_gate_keeps_cell():
    rng = np.random.default_rng(8)
    d, hd = 3, 2
    b = np.zeros(4 * hd)
    b[hd : 2 * hd] = 100.0  # forget gate
    b[0:hd] = -100.0  # input gate
    params = {"W_x": p(np.zeros((d, 4 * hd))), "W_h": p(np.zeros((hd, 4 * hd))), "b": p(b)}
    c_prev = rng.normal(size=(1, hd))
    _, c = T.lstm_cell(Tensor(rng.normal(size=(1, d))), Tensor(rng.normal(size=(1, hd))), Tensor(c_prev), params)
    np.testing.assert_allclose(c.data, c_prev, atol=1e-12)


def test_lstm_cell_matches_scalar_recurrence():
    rng = np.random.default_rng(9)
    d, hd = 2, 3
    params = _lstm_params(rng, d, hd, 0.5)
    x, h0, c0 = rng.normal(size=d), rng.normal(size=hd), rng.normal(size=hd)
    h, c = T.lstm_cell(Tensor(x[None]), Tensor(h0[None]), Tensor(c0[None]), params)
    wx, wh, b = (params[k].data for k in ("W_x", "W_h", "b"))
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    for j in range(hd):
        z = [b[g * hd + j] + sum(x[i] * wx[i, g * hd + j] for i in range(d))
             + sum(h0[i] * wh[i, g * hd + j] for i in range(hd)) for g in range(4)]
        cj = sig(z[1]) * c0[j] + sig(z[0]) * np.tanh(z[2])
        assert abs(c.data[0, j] - cj) < 1e-12
        assert abs(h.data[0, j] - sig(z[3]) * np.tanh(cj)) < 1e-12


# -- backward -------------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = p(np.random.default_rng(10).normal(size=(3, 2, 4)))
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((3, 2, 4)))


def test_backward_square():
    x = p(3.0)
    (x * x).backward()
    assert x.grad == 6.0


def test_backward_accumulates_fan_out():
    x = p([1.0, 2.0])
    y = x * x + x * 3.0 + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 4.0)


def test_backward_populates_every_leaf_in_a_chain():
    rng = np.random.default_rng(11)
    leaves = [p(rng.normal(size=(3, 3))) for _ in range(4)]
    out = leaves[0]
    for leaf in leaves[1:]:
        out = T.tanh(out @ leaf)
    out.sum().backward()
    for leaf in leaves:
        assert leaf.grad is not None and leaf.grad.shape == leaf.shape


def test_no_grad_builds_no_graph():
    x = p([1.0, 2.0])
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_two_layer_mse_net_matches_finite_differences():
    rng = np.random.default_rng(12)
    l1, l2 = Dense(3, 5, rng), Dense(5, 2, rng)
    x, y = Tensor(rng.normal(size=(6, 3))), Tensor(rng.normal(size=(6, 2)))
    f = lambda: T.square(l2(T.tanh(l1(x))) - y).mean()  # noqa: E731
    report = gradient_check(f, [*l1.parameters().values(), *l2.parameters().values()])
    assert report.max_rel_error < 1e-4


def test_gradient_check_sum_of_squares_is_exact():
    x = p(np.random.default_rng(13).normal(size=(4, 3)))
    report = gradient_check(lambda: (x * x).sum(), [x])
    assert report.max_rel_error < 1e-8
    assert report.n_checked == 12


def test_gradient_check_flags_wrong_gradient():
    x = p(np.random.default_rng(14).normal(size=5))

    def wrong_square(a):
        return T._result(a.data**2, (a,), lambda g: ((a, g * a.data),))

    report = gradient_check(lambda: wrong_square(x).sum(), [x])
    assert not report.passed


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-3, 3, allow_nan=False)))
def test_values_stay_finite_and_grads_match_shape(data):
    x = p(data)
    out = (T.sigmoid(x) * T.tanh(x) + T.relu(x)).sum()
    out.backward()
    assert np.isfinite(out.data).all()
    assert x.grad.shape == x.shape


# -- Adam -----------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState())
    assert np.array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    params = {"p": np.array([0.0])}
    state = AdamState(lr=0.001)
    adam_step(params, {"p": np.array([5.0])}, state)
    assert state.t == 1
    assert params["p"][0] == pytest.approx(-0.001, rel=1e-6)
    before = params["p"][0]
    adam_step(params, {"p": np.array([5.0])}, state)
    assert params["p"][0] < before


def test_adam_rejects_non_finite_gradient():
    params = {"p": np.array([1.0])}
    with pytest.raises(NumericError, match="'p'"):
        adam_step(params, {"p": np.array([np.nan])}, AdamState())
    assert params["p"][0] == 1.0


def test_adam_zero_lr_is_bit_identical():
    w = parameter(np.random.default_rng(15).normal(size=(3, 3)))
    opt = Adam({"w": w}, lr=0.0)
    before = w.data.copy()
    (w * w).sum().backward()
    opt.step()
    assert np.array_equal(w.data, before)
