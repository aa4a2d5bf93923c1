import numpy as np
import pytest

from honeyloop.errors import FormatError, NonFiniteGradientError, ShapeError
from honeyloop.neural import (
    AdamState,
    NetworkSpec,
    QNetwork,
    adam_step,
    batchnorm_backward,
    batchnorm_forward,
    dense_backward,
    dense_forward,
    dueling_backward,
    dueling_combine,
    global_norm,
    huber,
    huber_grad,
    load_checkpoint,
    lstm_backward,
    lstm_forward,
    save_checkpoint,
    sigmoid,
)

TOY = NetworkSpec(seq_len=4, obs_dim=5, runtime_dim=3, lstm_units=6, dense_units=5, dropout=0.2)


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    # norm-wise, so that near-zero entries do not dominate
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def test_sigmoid_is_stable():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(np.array([-1000.0, 1000.0])).tolist() == [0.0, 1.0]
    assert sigmoid(2.0) == pytest.approx(1 / (1 + np.exp(-2.0)))


def test_dense_gradients():
    rng = np.random.default_rng(0)
    x, W, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
    up = rng.normal(size=(4, 2))
    f = lambda: float((dense_forward(x, W, b)[0] * up).sum())
    dx, dW, db = dense_backward(dense_forward(x, W, b)[1], up, W)
    assert rel_err(dx, numeric_grad(f, x)) < 1e-7
    assert rel_err(dW, numeric_grad(f, W)) < 1e-7
    assert rel_err(db, numeric_grad(f, b)) < 1e-7


def lstm_setup(seed=1, B=3, T=5, D=4, H=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(B, T, D))
    mask = np.ones((B, T), dtype=bool)
    mask[0, :2] = False
    mask[2, :4] = False
    Wx, Wh = rng.normal(size=(D, 4 * H)) * 0.5, rng.normal(size=(H, 4 * H)) * 0.5
    b = rng.normal(size=4 * H) * 0.1
    return x, mask, Wx, Wh, b, rng.normal(size=(B, H))


def test_lstm_gradients():
    x, mask, Wx, Wh, b, up = lstm_setup()
    f = lambda: float((lstm_forward(x, mask, Wx, Wh, b)[0] * up).sum())
    _, cache = lstm_forward(x, mask, Wx, Wh, b)
    dx, dWx, dWh, db = lstm_backward(cache, up, Wx, Wh)
    for analytic, param in ((dx, x), (dWx, Wx), (dWh, Wh), (db, b)):
        assert rel_err(analytic, numeric_grad(f, param)) < 1e-6
    # padded positions get no gradient
    assert not dx[0, :2].any() and not dx[2, :4].any()


def test_lstm_masking_matches_truncated_sequence():
    x, mask, Wx, Wh, b, _ = lstm_setup()
    h, _ = lstm_forward(x, mask, Wx, Wh, b)
    noisy = x.copy()
    noisy[0, :2] = 1e3
    noisy[2, :4] = -7.0
    assert np.array_equal(lstm_forward(noisy, mask, Wx, Wh, b)[0], h)
    h_short, _ = lstm_forward(x[2:3, 4:], np.ones((1, 1), bool), Wx, Wh, b)
    assert np.allclose(h[2], h_short[0], atol=1e-14)


def test_lstm_single_step_by_hand():
    # one step from zero state: c = i*g, h = o*tanh(c)
    x, Wx, Wh = np.array([[[1.0]]]), np.array([[0.5, -0.5, 1.0, 2.0]]), np.zeros((1, 4))
    h, _ = lstm_forward(x, np.ones((1, 1), bool), Wx, Wh, np.zeros(4))
    i, g, o = sigmoid(0.5), np.tanh(1.0), sigmoid(2.0)
    assert h[0, 0] == pytest.approx(o * np.tanh(i * g))


def test_batchnorm_gradients_train_and_eval():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 4))
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    rm, rv = rng.normal(size=4), rng.uniform(0.5, 2, size=4)
    up = rng.normal(size=(6, 4))
    for train in (True, False):
        f = lambda: float((batchnorm_forward(x, gamma, beta, rm, rv, train)[0] * up).sum())
        _, cache, _, _ = batchnorm_forward(x, gamma, beta, rm, rv, train)
        dx, dg, db = batchnorm_backward(cache, up)
        assert rel_err(dx, numeric_grad(f, x)) < 1e-6
        assert rel_err(dg, numeric_grad(f, gamma)) < 1e-6
        assert rel_err(db, numeric_grad(f, beta)) < 1e-6


def test_dueling_example_and_gradient():
    q = dueling_combine(np.array([[1.0]]), np.array([[0.0, 2.0]]))
    assert q.tolist() == [[0.0, 2.0]]
    rng = np.random.default_rng(3)
    v, a, up = rng.normal(size=(3, 1)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    f = lambda: float((dueling_combine(v, a) * up).sum())
    dv, da = dueling_backward(up)
    assert rel_err(dv, numeric_grad(f, v)) < 1e-7
    assert rel_err(da, numeric_grad(f, a)) < 1e-7


def toy_batch(B=4, seed=5):
    rng = np.random.default_rng(seed)
    seq = rng.normal(size=(B, TOY.seq_len, TOY.obs_dim))
    mask = np.ones((B, TOY.seq_len), dtype=bool)
    mask[1, :2] = False
    mask[3, :3] = False
    return seq, mask, rng.normal(size=(B, TOY.runtime_dim)), rng.normal(size=(B, TOY.n_actions))


@pytest.mark.parametrize("train", [True, False])
def test_composed_network_gradients(train):
    net = QNetwork.create(TOY, seed=7)
    seq, mask, runtime, up = toy_batch()

    def f():
        rng = np.random.default_rng(11)
        q, _ = net.forward(seq, mask, runtime, train=train, rng=rng, update_stats=False)
        return float((q * up).sum())

    q, cache = net.forward(seq, mask, runtime, train=train, rng=np.random.default_rng(11), update_stats=False)
    grads = net.backward(cache, up)
    for name, g in grads.items():
        assert rel_err(g, numeric_grad(f, net.params[name])) < 1e-5, name
    assert rel_err(net.input_gradient(cache, up), numeric_grad(f, seq)) < 1e-5


def test_zero_upstream_gives_zero_gradients():
    net = QNetwork.create(TOY, seed=1)
    seq, mask, runtime, _ = toy_batch()
    q, cache = net.forward(seq, mask, runtime, train=True, rng=np.random.default_rng(0))
    grads = net.backward(cache, np.zeros_like(q))
    assert all(not g.any() for g in grads.values())


def test_eval_forward_is_deterministic_and_single_input():
    net = QNetwork.create(TOY, seed=1)
    seq, mask, runtime, _ = toy_batch()
    q = net.q_values(seq, mask, runtime)
    assert np.array_equal(q, net.q_values(seq, mask, runtime))
    assert np.allclose(net.q_values(seq[0], mask[0], runtime[0]), q[0])


def test_shape_errors():
    net = QNetwork.create(TOY)
    seq, mask, runtime, _ = toy_batch()
    with pytest.raises(ShapeError):
        net.q_values(seq[:, :3], mask, runtime)
    with pytest.raises(ShapeError):
        net.q_values(seq, mask[:, :3], runtime)
    with pytest.raises(ShapeError):
        net.q_values(seq, mask, runtime[:, :2])


def test_default_network_shape():
    net = QNetwork.create()
    q = net.q_values(np.zeros((10, 163)), np.ones(10, bool), np.zeros(3))
    assert q.shape == (2,)
    assert net.params["lstm_Wx"].shape == (163, 256)


def test_huber_values():
    assert huber(0.5, 0.0) == pytest.approx(0.125)
    assert huber(2.0, 0.0) == pytest.approx(1.5)
    assert huber(1.0, 0.0) == pytest.approx(0.5)
    assert huber(-2.0, 0.0) == pytest.approx(1.5)
    assert huber_grad(np.array([0.5, 3.0, -3.0]), np.zeros(3)).tolist() == pytest.approx([0.5 / 3, 1 / 3, -1 / 3])


def test_adam_zero_gradient_is_noop():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState())
    assert params["w"].tolist() == [1.0, -2.0]


def test_adam_clips_global_norm():
    params = {"a": np.zeros(1), "b": np.zeros(1)}
    grads = {"a": np.array([60.0]), "b": np.array([80.0])}
    assert global_norm(grads) == 100.0
    state = AdamState(clip_norm=10.0)
    adam_step(params, grads, state)
    # m after one step is (1 - beta1) times the clipped gradient
    assert state.m["a"][0] == pytest.approx(0.1 * 6.0)
    assert state.m["b"][0] == pytest.approx(0.1 * 8.0)


def test_adam_two_scalar_steps():
    # frozen from a hand evaluation of the bias-corrected recurrences
    params = {"w": np.array([1.0])}
    state = AdamState(learning_rate=0.1, clip_norm=None)
    adam_step(params, {"w": np.array([0.5])}, state)
    assert params["w"][0] == pytest.approx(0.9, abs=1e-7)
    adam_step(params, {"w": np.array([-1.0])}, state)
    assert params["w"][0] == pytest.approx(0.936610, abs=1e-6)
    assert state.step == 2


def test_adam_rejects_non_finite_without_mutation():
    params = {"w": np.array([1.0]), "u": np.array([2.0])}
    state = AdamState()
    with pytest.raises(NonFiniteGradientError):
        adam_step(params, {"u": np.array([1.0]), "w": np.array([np.nan])}, state)
    assert params["w"][0] == 1.0 and params["u"][0] == 2.0 and state.step == 0
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(3)}, state)


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    net = QNetwork.create(TOY, seed=3)
    seq, mask, runtime, up = toy_batch()
    state = AdamState()
    for _ in range(3):
        q, cache = net.forward(seq, mask, runtime, train=True, rng=np.random.default_rng(0))
        adam_step(net.params, net.backward(cache, up), state)
    path = save_checkpoint(tmp_path / "c.npz", {"online": net}, {"online": state}, {"epsilon": 0.5})
    nets, adams, extra = load_checkpoint(path)
    back = nets["online"]
    assert back.spec == TOY and extra == {"epsilon": 0.5}
    for k, v in net.params.items():
        assert np.array_equal(back.params[k], v)
    assert np.array_equal(back.bn_mean, net.bn_mean) and np.array_equal(back.bn_var, net.bn_var)
    assert np.array_equal(back.q_values(seq, mask, runtime), net.q_values(seq, mask, runtime))
    assert adams["online"].step == 3
    assert all(np.array_equal(adams["online"].m[k], state.m[k]) for k in state.m)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, a=np.zeros(2))
    with pytest.raises(FormatError):
        load_checkpoint(path)
