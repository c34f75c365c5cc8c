import numpy as np
import pytest

from stepnet import nn


def _rand_lstm(rng, H, n_in, scale=0.5):
    return nn.LstmParams(rng.normal(0, scale, (4 * H, n_in)), rng.normal(0, scale, (4 * H, H)),
                         rng.normal(0, scale, 4 * H))


def _naive_lstm(p, x_seq, h, c):
    # per-gate, per-step reference written from the recurrence
    for x in x_seq:
        z = {}
        for name in nn.GATES:
            W, U, b = p.gate(name)
            z[name] = W @ x + U @ h + b
        sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
        i, f, g, o = sig(z["i"]), sig(z["f"]), np.tanh(z["g"]), sig(z["o"])
        c = f * c + i * g
        h = o * np.tanh(c)
    return h, c


def test_zero_params_zero_state():
    p = nn.LstmParams.zeros(4, 3)
    h, _ = nn.lstm_forward(p, np.random.default_rng(0).normal(size=(5, 3)))
    assert np.all(h == 0)


def test_scalar_lstm_hand_value():
    big = 50.0
    p = nn.LstmParams.from_gates(
        Ws=[[[0.0]], [[0.0]], [[1.0]], [[0.0]]],
        Us=[[[0.0]], [[0.0]], [[0.0]], [[0.0]]],
        bs=[[big], [0.0], [0.0], [big]],
    )
    h, _ = nn.lstm_forward(p, np.array([[1.0]]))
    assert h[0] == pytest.approx(np.tanh(np.tanh(1.0)), abs=1e-12)
    assert h[0] == pytest.approx(0.6421, abs=1e-4)


def test_matches_naive_recurrence(rng):
    p = _rand_lstm(rng, 5, 3)
    x = rng.normal(size=(6, 3))
    h0, c0 = rng.normal(size=5), rng.normal(size=5)
    h, _ = nn.lstm_forward(p, x, h0, c0)
    h_ref, _ = _naive_lstm(p, x, h0, c0)
    np.testing.assert_allclose(h, h_ref, rtol=1e-12, atol=1e-14)


def test_two_steps_equal_one_step_twice(rng):
    p = _rand_lstm(rng, 4, 2)
    x = rng.normal(size=(1, 2))
    h2, _ = nn.lstm_forward(p, np.vstack([x, x]))
    h1, c1 = _naive_lstm(p, x, np.zeros(4), np.zeros(4))
    h1b, _ = nn.lstm_forward(p, x, h1, c1)
    np.testing.assert_allclose(h2, h1b, rtol=1e-13)


def test_cache_does_not_change_result(rng):
    p = _rand_lstm(rng, 6, 3)
    x = rng.normal(size=(4, 7, 3))
    a, cache = nn.lstm_forward(p, x, keep_cache=True)
    b, none = nn.lstm_forward(p, x, keep_cache=False)
    assert none is None and cache is not None
    assert a.tobytes() == b.tobytes()


def test_batch_equals_single(rng):
    p = _rand_lstm(rng, 4, 3)
    x = rng.normal(size=(3, 5, 3))
    hb, _ = nn.lstm_forward(p, x)
    for k in range(3):
        hk, _ = nn.lstm_forward(p, x[k])
        np.testing.assert_allclose(hb[k], hk, rtol=1e-13)


def test_lstm_shape_errors(rng):
    p = _rand_lstm(rng, 4, 3)
    with pytest.raises(nn.ShapeError):
        nn.lstm_forward(p, np.zeros((5, 2)))
    with pytest.raises(nn.ShapeError):
        nn.lstm_forward(p, np.zeros((0, 3)))
    with pytest.raises(nn.ShapeError):
        nn.LstmParams(np.zeros((8, 3)), np.zeros((8, 3)), np.zeros(8))


def test_non_finite_input_rejected(rng):
    p = _rand_lstm(rng, 2, 1)
    with pytest.raises(nn.NonFiniteError):
        nn.lstm_forward(p, np.array([[np.nan]]))


def test_dense_examples(rng):
    p = nn.DenseParams(np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(nn.dense_forward(p, [-1.0, 2.0], "relu"), [0.0, 2.0])
    p = nn.DenseParams(np.zeros((1, 4)), np.array([3.0]))
    np.testing.assert_array_equal(nn.dense_forward(p, rng.normal(size=4), "none"), [3.0])
    W, b, x = rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=2)
    p = nn.DenseParams(W, b)
    brute = [sum(W[r, k] * x[k] for k in range(2)) + b[r] for r in range(3)]
    np.testing.assert_allclose(nn.dense_forward(p, x), brute, rtol=1e-14)
    with pytest.raises(nn.ShapeError):
        nn.dense_forward(p, np.zeros(3))
    with pytest.raises(nn.ShapeError):
        nn.DenseParams(np.zeros((3, 2)), np.zeros(2))


def test_dropout_identity_cases(rng):
    x = rng.normal(size=50)
    assert np.array_equal(nn.dropout(x, 0.7, rng, training=False), x)
    assert np.array_equal(nn.dropout(x, 0.0, rng, training=True), x)
    for bad in (-0.1, 1.0, 1.5):
        with pytest.raises(ValueError):
            nn.dropout(x, bad, rng, True)


def test_dropout_mean_preserved():
    y = nn.dropout(np.ones(100_000), 0.5, np.random.default_rng(1), training=True)
    assert abs(y.mean() - 1.0) < 0.02
    assert set(np.unique(y)) == {0.0, 2.0}


def test_dropout_deterministic_given_rng():
    a = nn.dropout(np.ones(100), 0.3, np.random.default_rng(5), True)
    b = nn.dropout(np.ones(100), 0.3, np.random.default_rng(5), True)
    assert np.array_equal(a, b)


def test_softmax_xent_examples():
    probs, loss, d = nn.softmax_xent([0.0, 0.0], 0)
    np.testing.assert_allclose(probs, [0.5, 0.5])
    assert loss == pytest.approx(np.log(2))
    probs, loss, d = nn.softmax_xent([1000.0, 0.0], 0)
    assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-300)
    assert probs[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        nn.softmax_xent([], 0)


def test_softmax_xent_gradient_fd(rng):
    for _ in range(20):
        z = rng.normal(scale=3, size=4)
        k = int(rng.integers(4))
        _, _, d = nn.softmax_xent(z, k)
        h = 1e-6
        fd = np.array([
            (nn.softmax_xent(z + h * e, k)[1] - nn.softmax_xent(z - h * e, k)[1]) / (2 * h)
            for e in np.eye(4)
        ])
        assert np.max(np.abs(d - fd) / np.maximum(np.abs(fd), 1e-8)) < 1e-6 or np.max(np.abs(d - fd)) < 1e-9


def test_softmax_properties(rng):
    z = rng.normal(scale=10, size=(200, 2))
    p = nn.softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((p > 0) & (p < 1))


def _fd_check(f, params, tape, h=1e-5):
    """Max of |analytic - fd| / max(1, |fd|) over every entry of every array."""
    worst = 0.0
    for k, arr in params.items():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            up = f()
            arr[idx] = old - h
            down = f()
            arr[idx] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(tape[k][idx] - fd) / max(1.0, abs(fd)))
    return worst


def test_lstm_backward_fd(rng):
    H, n_in, T = 3, 2, 4
    p = _rand_lstm(rng, H, n_in)
    x = rng.normal(size=(T, n_in))
    v = rng.normal(size=H)  # loss = v . h_T

    def loss():
        return float(v @ nn.lstm_forward(p, x, keep_cache=False)[0])

    _, cache = nn.lstm_forward(p, x)
    tape, dx = nn.lstm_backward(p, cache, v)
    assert _fd_check(loss, p.arrays(), tape) < 1e-4
    # input gradient too
    assert _fd_check(loss, {"x": x}, {"x": dx}) < 1e-4


def test_lstm_backward_zero_upstream(rng):
    p = _rand_lstm(rng, 3, 2)
    _, cache = nn.lstm_forward(p, rng.normal(size=(4, 2)))
    tape, dx = nn.lstm_backward(p, cache, np.zeros(3))
    assert all(np.all(g == 0) for g in tape.values()) and np.all(dx == 0)


def test_lstm_backward_batch_sums(rng):
    p = _rand_lstm(rng, 3, 2)
    x = rng.normal(size=(4, 2))
    v = rng.normal(size=3)
    _, c1 = nn.lstm_forward(p, x)
    t1, _ = nn.lstm_backward(p, c1, v)
    _, c2 = nn.lstm_forward(p, np.stack([x, x]))
    t2, _ = nn.lstm_backward(p, c2, np.stack([v, v]))
    for k in t1:
        np.testing.assert_allclose(t2[k], 2 * t1[k], rtol=1e-12)


def test_lstm_backward_errors(rng):
    p = _rand_lstm(rng, 3, 2)
    _, cache = nn.lstm_forward(p, rng.normal(size=(4, 2)))
    with pytest.raises(nn.ShapeError):
        nn.lstm_backward(p, cache, np.zeros(4))
    with pytest.raises(nn.ShapeError):
        nn.lstm_backward(_rand_lstm(rng, 4, 2), cache, np.zeros(4))
    with pytest.raises(ValueError):
        nn.lstm_backward(p, None, np.zeros(3))


def test_dense_backward_fd(rng):
    p = nn.DenseParams(rng.normal(size=(4, 3)), rng.normal(size=4))
    x = rng.normal(size=(5, 3))
    v = rng.normal(size=(5, 4))

    def loss():
        return float(np.sum(v * nn.dense_forward(p, x, "relu")))

    y = nn.dense_forward(p, x, "relu")
    tape, dx = nn.dense_backward(p, x, y, v, "relu")
    assert _fd_check(loss, p.arrays(), tape) < 1e-4
    assert _fd_check(loss, {"x": x}, {"x": dx}) < 1e-4


def test_sgd_step():
    params = {"a": np.array([1.0])}
    nn.sgd_step(params, {"a": np.array([2.0])}, 0.1)
    assert params["a"][0] == pytest.approx(0.8)
    before = {"a": np.array([3.0, 4.0])}
    nn.sgd_step(before, {"a": np.zeros(2)}, 0.5)
    assert np.array_equal(before["a"], [3.0, 4.0])
    with pytest.raises(ValueError):
        nn.sgd_step(before, {"a": np.zeros(2)}, 0.0)


def test_sgd_descends_quadratic(rng):
    A = rng.normal(size=(5, 5))
    Q = A @ A.T + np.eye(5)
    theta = {"w": rng.normal(size=5)}
    lr = 1.0 / np.linalg.eigvalsh(Q).max()
    losses = []
    for _ in range(100):
        w = theta["w"]
        losses.append(0.5 * w @ Q @ w)
        nn.sgd_step(theta, {"w": Q @ w}, lr)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_clip_gradients():
    tape = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = nn.clip_gradients(tape, 1.0)
    assert nn.grad_norm(out) == pytest.approx(1.0)
    assert nn.clip_gradients(tape, 10.0) is tape


def test_init_ranges():
    rng = np.random.default_rng(0)
    p = nn.LstmParams.init(256, 6, rng)
    assert np.abs(p.W).max() <= 1 / np.sqrt(6)
    assert np.abs(p.U).max() <= 1 / np.sqrt(256)
    np.testing.assert_array_equal(p.gate("f")[2], 1.0)
    np.testing.assert_array_equal(p.gate("i")[2], 0.0)
    d = nn.DenseParams.init(512, 256, rng)
    assert np.abs(d.W).max() <= 1 / 16
