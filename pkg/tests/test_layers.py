import numpy as np
import pytest
from hypothesis import given, strategies as st

from resnls import autodiff as ad
from resnls.autodiff import Tensor
from resnls.errors import ConfigError, DegenerateBatchError, DimensionError, EmptySequenceError
from resnls.gradcheck import layer_checks
from resnls.layers import (
    GATES, BatchNorm1D, Conv1D, Dropout, Linear, LSTMCell, RNNCell, lstm_sequence, lstm_step, rnn_sequence, rnn_step,
)


def brute_conv(x, w, b, pad):
    batch, cin, length = x.shape
    cout, _, k = w.shape
    xp = np.zeros((batch, cin, length + 2 * pad))
    xp[:, :, pad : pad + length] = x
    out = np.zeros((batch, cout, length + 2 * pad - k + 1))
    for bi in range(batch):
        for o in range(cout):
            for l in range(out.shape[2]):
                out[bi, o, l] = b[o] + sum(w[o, c, j] * xp[bi, c, l + j] for c in range(cin) for j in range(k))
    return out


def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_lstm_step(cell, x, h, c):
    """Gate-by-gate recurrence written directly from the cell's named weights."""
    W = {k: cell.w_input[k].data for k in GATES}
    U = {k: cell.w_hidden[k].data for k in GATES}
    b = {k: cell.b[k].data for k in GATES}
    pre = {k: x @ W[k].T + h @ U[k].T + b[k] for k in GATES}
    i, f, o = np_sigmoid(pre["i"]), np_sigmoid(pre["f"]), np_sigmoid(pre["o"])
    g = np.tanh(pre["g"])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


# -- conv1d ----------------------------------------------------------------------


def test_identity_kernel(rng):
    conv = Conv1D(1, 1, 1, rng)
    conv.kernels.data[:] = 1.0
    x = rng.normal(size=(2, 1, 6))
    np.testing.assert_array_equal(conv(Tensor(x)).data, x)


def test_hand_cross_correlation():
    conv = Conv1D(1, 1, 3, np.random.default_rng(0))
    conv.kernels.data[:] = [[[1.0, 0.0, -1.0]]]
    out = conv(Tensor([[[1.0, 2.0, 3.0, 4.0, 5.0]]])).data
    np.testing.assert_array_equal(out, [[[-2.0, -2.0, -2.0, -2.0, 4.0]]])


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.sampled_from([1, 3, 5]), st.integers(0, 10_000))
def test_conv_matches_brute_force(batch, cin, cout, k, seed):
    r = np.random.default_rng(seed)
    length = k + r.integers(0, 5)
    conv = Conv1D(cin, cout, k, r)
    conv.bias.data[:] = r.normal(size=cout)
    x = r.normal(size=(batch, cin, length))
    want = brute_conv(x, conv.kernels.data, conv.bias.data, conv.padding)
    got = conv(Tensor(x)).data
    assert got.shape == (batch, cout, length)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_conv_errors(rng):
    with pytest.raises(ConfigError):
        Conv1D(1, 1, 2, rng)
    conv = Conv1D(2, 3, 3, rng)
    with pytest.raises(DimensionError):
        conv(Tensor(np.ones((1, 1, 5))))
    with pytest.raises(DimensionError):
        Conv1D(1, 1, 5, rng, padding=0)(Tensor(np.ones((1, 1, 3))))


# -- batch norm ------------------------------------------------------------------


def test_batchnorm_train_standardizes(rng):
    bn = BatchNorm1D(4)
    x = rng.normal(3.0, 50.0, size=(8, 4, 6))
    out = bn(Tensor(x), training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-6)


def test_batchnorm_standardized_input_unchanged(rng):
    x = rng.normal(size=(16, 2, 8))
    x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
    bn = BatchNorm1D(2)
    out = bn(Tensor(x), training=True).data
    # unit variance leaves only the eps term in the denominator
    np.testing.assert_allclose(out, x / np.sqrt(1.0 + bn.eps), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(out, x, rtol=bn.eps)


def test_batchnorm_running_stats_and_eval(rng):
    bn = BatchNorm1D(3, momentum=0.1)
    x = rng.normal(2.0, 3.0, size=(5, 3, 4))
    bn(Tensor(x), training=True)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 2)), rtol=1e-12)
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=(0, 2)), rtol=1e-12)
    before = (bn.running_mean.copy(), bn.running_var.copy())
    out = bn(Tensor(x), training=False).data
    want = (x - before[0][None, :, None]) / np.sqrt(before[1][None, :, None] + bn.eps)
    np.testing.assert_allclose(out, want, rtol=1e-12)
    np.testing.assert_array_equal(bn.running_mean, before[0])


def test_batchnorm_degenerate_batch():
    with pytest.raises(DegenerateBatchError):
        BatchNorm1D(2)(Tensor(np.ones((1, 2, 1))), training=True)


# -- dropout ---------------------------------------------------------------------


def test_dropout_identities(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(Dropout(0.8)(Tensor(x), training=False).data, x)
    np.testing.assert_array_equal(Dropout(1.0)(Tensor(x), training=True).data, x)


def test_dropout_preserves_mean_in_expectation():
    out = Dropout(0.8, seed=3)(Tensor(np.ones(100_000)), training=True).data
    assert abs(out.mean() - 1.0) < 0.01
    assert set(np.unique(out)) <= {0.0, 1.25}


def test_dropout_keep_prob_range():
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(ConfigError):
            Dropout(bad)


# -- linear ----------------------------------------------------------------------


def test_linear_affine(rng):
    lin = Linear(4, 2, rng)
    lin.bias.data[:] = [0.5, -1.0]
    x = rng.normal(size=(3, 4))
    np.testing.assert_allclose(lin(Tensor(x)).data, x @ lin.weight.data.T + lin.bias.data, rtol=1e-14)
    with pytest.raises(DimensionError):
        lin(Tensor(np.ones((3, 5))))


def test_init_bounds(rng):
    for layer, fan_in in ((Linear(50, 7, rng), 50), (Conv1D(4, 6, 3, rng), 12), (LSTMCell(3, 9, rng), None)):
        for name, p in layer.parameters().items():
            if name.startswith("b"):
                continue
            bound = 1 / np.sqrt(fan_in if fan_in else p.shape[1])
            assert np.all(np.abs(p.data) <= bound)


# -- lstm ------------------------------------------------------------------------


def test_lstm_parameter_names_and_forget_bias(rng):
    cell = LSTMCell(1, 4, rng)
    names = set(cell.parameters())
    assert names == {f"W_i{k}" for k in GATES} | {f"W_h{k}" for k in GATES} | {f"b_{k}" for k in GATES}
    np.testing.assert_array_equal(cell.b["f"].data, np.ones(4))
    np.testing.assert_array_equal(cell.b["i"].data, np.zeros(4))


def zero_cell(input_size, hidden):
    cell = LSTMCell(input_size, hidden, np.random.default_rng(0))
    for p in cell.parameters().values():
        p.data[:] = 0.0
    return cell


def test_lstm_zero_weights_closed_form(rng):
    cell = zero_cell(2, 3)
    c_prev = rng.normal(size=(4, 3))
    h, c = lstm_step(cell, Tensor(rng.normal(size=(4, 2))), Tensor(rng.normal(size=(4, 3))), Tensor(c_prev))
    np.testing.assert_array_equal(c.data, 0.5 * c_prev)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c_prev), rtol=1e-15)


def test_lstm_hand_calculation():
    cell = zero_cell(1, 2)
    # i gate sees the input, f gate the first hidden unit, candidate a bias, output gate both
    cell.w_input["i"].data[:] = [[1.0], [-1.0]]
    cell.w_hidden["f"].data[:] = [[0.5, 0.0], [0.0, 0.5]]
    cell.b["g"].data[:] = [0.2, -0.3]
    cell.w_input["o"].data[:] = [[0.3], [0.3]]
    x, h0, c0 = 2.0, np.array([1.0, -1.0]), np.array([0.4, 0.6])
    i = 1 / (1 + np.exp(-np.array([2.0, -2.0])))
    f = 1 / (1 + np.exp(-np.array([0.5, -0.5])))
    g = np.tanh(np.array([0.2, -0.3]))
    o = 1 / (1 + np.exp(-np.array([0.6, 0.6])))
    c1 = f * c0 + i * g
    h1 = o * np.tanh(c1)
    h, c = lstm_step(cell, Tensor([[x]]), Tensor([h0]), Tensor([c0]))
    np.testing.assert_allclose(c.data[0], c1, rtol=0, atol=1e-12)
    np.testing.assert_allclose(h.data[0], h1, rtol=0, atol=1e-12)


def test_lstm_sequence_of_one_step_equals_step(rng):
    cell = LSTMCell(2, 3, rng)
    x = rng.normal(size=(4, 1, 2))
    h0, c0 = Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 3)))
    hs, h, c = lstm_sequence(cell, Tensor(x), h0, c0)
    h1, c1 = lstm_step(cell, Tensor(x[:, 0]), h0, c0)
    np.testing.assert_allclose(h.data, h1.data, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(c.data, c1.data, rtol=1e-15, atol=1e-15)
    np.testing.assert_array_equal(hs.data[:, 0], h.data)


def test_lstm_sequence_matches_iterated_oracle(rng):
    cell = LSTMCell(1, 5, rng)
    xs = np.full((2, 7, 1), 0.3)
    hs, _, _ = lstm_sequence(cell, Tensor(xs))
    h, c = np.zeros((2, 5)), np.zeros((2, 5))
    for t in range(7):
        h, c = np_lstm_step(cell, xs[:, t], h, c)
        np.testing.assert_allclose(hs.data[:, t], h, rtol=1e-12, atol=1e-14)


def test_lstm_reverse_consumes_last_first(rng):
    cell = LSTMCell(1, 3, rng)
    xs = rng.normal(size=(2, 4, 1))
    _, h_rev, _ = lstm_sequence(cell, Tensor(xs), reverse=True)
    _, h_flip, _ = lstm_sequence(cell, Tensor(xs[:, ::-1].copy()))
    np.testing.assert_array_equal(h_rev.data, h_flip.data)


# float64 sigmoid rounds to exactly 1.0 only once |pre-activation| > ~36.7; this scale range stays below
@given(st.integers(0, 10_000), st.floats(0.1, 3.0))
def test_lstm_state_bounds(seed, scale):
    r = np.random.default_rng(seed)
    cell = LSTMCell(2, 4, r)
    for p in cell.parameters().values():
        p.data *= scale
    c_prev = r.normal(0, 3, size=(3, 4))
    x, h_prev = Tensor(r.normal(size=(3, 2))), Tensor(r.normal(size=(3, 4)))
    pre = ad.add(ad.matmul(x, cell.stacked()[0]), cell.stacked()[2])
    gates = ad.lstm_gates(ad.add(pre, ad.matmul(h_prev, cell.stacked()[1]))).data
    sig = np.concatenate([gates[:, :8], gates[:, 12:]], axis=1)
    assert np.all((sig > 0) & (sig < 1))
    _, c = lstm_step(cell, x, h_prev, Tensor(c_prev))
    assert np.all(np.abs(c.data) <= np.abs(c_prev) + 1 + 1e-12)


def test_lstm_errors(rng):
    cell = LSTMCell(2, 3, rng)
    with pytest.raises(EmptySequenceError):
        lstm_sequence(cell, [])
    with pytest.raises(DimensionError):
        lstm_sequence(cell, Tensor(np.ones((2, 4, 3))))
    with pytest.raises(DimensionError):
        lstm_step(cell, Tensor(np.ones((2, 2))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 3))))


# -- rnn -------------------------------------------------------------------------


def test_rnn_zero_weights(rng):
    cell = RNNCell(2, 3, rng)
    for p in cell.parameters().values():
        p.data[:] = 0.0
    hs, h = rnn_sequence(cell, Tensor(rng.normal(size=(2, 5, 2))))
    np.testing.assert_array_equal(hs.data, np.zeros((2, 5, 3)))


def test_rnn_scalar_hand_recurrence():
    cell = RNNCell(1, 1, np.random.default_rng(0))
    cell.w_ih.data[:] = 0.5
    cell.w_hh.data[:] = -0.8
    cell.b.data[:] = 0.1
    h = 0.0
    xs = [1.0, -2.0, 0.5]
    _, last = rnn_sequence(cell, Tensor(np.array(xs).reshape(1, 3, 1)))
    for x in xs:
        h = np.tanh(0.5 * x - 0.8 * h + 0.1)
    assert abs(last.item() - h) < 1e-15
    assert rnn_step(cell, Tensor([[1.0]]), Tensor([[0.0]])).item() == np.tanh(0.6)


# -- gradients -------------------------------------------------------------------


def test_every_layer_passes_grad_check():
    report = layer_checks(seed=7)
    assert report.passed, report.format()
    groups = {e.name.split(".")[0] for e in report.entries}
    assert groups == {"conv1d", "batchnorm_train", "batchnorm_eval", "linear", "lstm", "rnn", "matmul"}
