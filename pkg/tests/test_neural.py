import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treedit import neural as nn


def _lstm(rng, d_in=6, d_h=4, scale=0.5):
    W, b = nn.init_lstm(rng, d_in, d_h, scale)
    return nn.LstmParams(W, b)


def test_zero_weights_give_zero_state():
    p = nn.LstmParams(np.zeros((16, 10)), np.zeros(16))
    h, c, _ = nn.lstm_step(p, np.zeros(4), np.zeros(4), np.linspace(-3, 3, 6))
    assert np.all(h == 0) and np.all(c == 0)


def test_forget_bias_initialised_to_one():
    W, b = nn.init_lstm(np.random.default_rng(0), 6, 4)
    assert np.all(b[4:8] == 1.0)
    assert np.all(np.abs(W) <= 0.08)


def test_lstm_saturation_is_finite():
    rng = np.random.default_rng(1)
    p = _lstm(rng, scale=3.0)
    h, c = np.zeros(4), np.zeros(4)
    for _ in range(50):
        h, c, _ = nn.lstm_step(p, h, c, rng.uniform(-10, 10, 6))
    assert np.all(np.isfinite(h)) and np.all(np.isfinite(c))


def test_lstm_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    p = _lstm(rng)
    x, h0, c0 = rng.normal(size=6), rng.normal(size=4), rng.normal(size=4)
    wh, wc = rng.normal(size=4), rng.normal(size=4)

    def f(params):
        q = nn.LstmParams(params["W"], params["b"])
        h, c, cache = nn.lstm_step(q, params["h0"], params["c0"], params["x"])
        dW, db = np.zeros_like(q.W), np.zeros_like(q.b)
        dx, dh0, dc0 = nn.lstm_step_backward(q, cache, wh, wc, dW, db)
        return float(wh @ h + wc @ c), {"W": dW, "b": db, "x": dx, "h0": dh0, "c0": dc0}

    params = {"W": p.W.copy(), "b": p.b.copy(), "x": x, "h0": h0, "c0": c0}
    errs = nn.grad_check_groups(f, params)
    assert max(errs.values()) <= 1e-4, errs


def test_attend_single_key():
    k = np.array([[0.3, -1.0, 2.0]])
    ctx, w = nn.attend(np.array([1.0, 2.0, 3.0]), k)
    assert w.tolist() == [1.0]
    np.testing.assert_array_equal(ctx, k[0])


def test_attend_orthogonal_query_is_uniform():
    keys = np.array([[0.0, 1.0], [0.0, -2.0], [0.0, 5.0]])
    ctx, w = nn.attend(np.array([1.0, 0.0]), keys)
    np.testing.assert_allclose(w, np.full(3, 1 / 3), atol=1e-15)
    np.testing.assert_allclose(ctx, keys.mean(axis=0), atol=1e-15)


def test_attend_matches_exp_normalize_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q, keys = rng.normal(size=5), rng.normal(size=(7, 5))
        scores = [math.exp(float(q @ k)) for k in keys]
        oracle = np.array(scores) / sum(scores)
        ctx, w = nn.attend(q, keys)
        np.testing.assert_allclose(w, oracle, atol=1e-12)
        np.testing.assert_allclose(ctx, oracle @ keys, atol=1e-12)


def test_attend_backward_fd():
    rng = np.random.default_rng(4)
    wv = rng.normal(size=4)

    def f(params):
        ctx, w = nn.attend(params["q"], params["k"])
        dq, dk = nn.attend_backward(params["q"], params["k"], w, wv)
        return float(wv @ ctx), {"q": dq, "k": dk}

    errs = nn.grad_check_groups(f, {"q": rng.normal(size=4), "k": rng.normal(size=(5, 4))})
    assert max(errs.values()) <= 1e-6


def test_masked_softmax_cases():
    np.testing.assert_allclose(nn.masked_softmax(np.zeros(4), range(4)), np.full(4, 0.25))
    d = nn.masked_softmax(np.array([5.0, -2.0, 9.0]), [1])
    assert d.tolist() == [0.0, 1.0, 0.0]


def test_masked_softmax_restrict_and_renormalize_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        logits = rng.normal(scale=4, size=10)
        mask = sorted(rng.choice(10, size=5, replace=False))
        full = np.exp(logits - logits.max())
        full /= full.sum()
        oracle = np.zeros(10)
        oracle[mask] = full[mask] / full[mask].sum()
        np.testing.assert_allclose(nn.masked_softmax(logits, mask), oracle, atol=1e-12)


def test_masked_softmax_extreme_logits():
    d = nn.masked_softmax(np.array([1e4, -1e4, 0.0]), [1, 2])
    assert d[0] == 0.0 and abs(d.sum() - 1) <= 1e-12


def test_cross_entropy_values():
    assert nn.cross_entropy(np.array([0.0, 1.0]), 1) == 0.0
    assert math.isclose(nn.cross_entropy(np.full(4, 0.25), 2), math.log(4), rel_tol=1e-15)
    assert math.isclose(nn.cross_entropy(np.array([1.0, 0.0]), 1), -math.log(1e-12))


def test_cross_entropy_grad_fd():
    rng = np.random.default_rng(6)
    mask = [0, 2, 3, 5]

    def f(params):
        dist = nn.masked_softmax(params["z"], mask)
        g = np.zeros(6)
        g[mask] = nn.cross_entropy_grad(dist, 3)[mask]
        return nn.cross_entropy(dist, 3), {"z": g}

    assert nn.grad_check(f, {"z": rng.normal(size=6)}) <= 1e-6


def test_sgd_examples():
    p = {"w": np.array([1.0])}
    nn.sgd_update(p, {"w": np.array([2.0])}, 0.1)
    assert p["w"][0] == pytest.approx(0.8)
    q = {"w": np.array([3.0, -1.0])}
    nn.sgd_update(q, {"w": np.array([5.0, 5.0])}, 0.0)
    assert q["w"].tolist() == [3.0, -1.0]


def test_sgd_clipping_halves_gradient():
    p = {"a": np.zeros(2)}
    g = {"a": np.array([6.0, 8.0])}  # norm 10
    nn.sgd_update(p, g, 1.0, clip=5.0)
    np.testing.assert_allclose(p["a"], [-3.0, -4.0])


def test_grad_check_linear_slice_exact():
    # O(1) coefficients: for a linear map only float round-off remains, and it
    # scales like 1e-16 * |f| / (eps * |grad|)
    rng = np.random.default_rng(7)
    A = rng.uniform(0.5, 2.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
    f = lambda params: (float(np.sum(A * params["W"])), {"W": A.copy()})
    assert nn.grad_check(f, {"W": rng.normal(size=(3, 4))}) <= 1e-9


def test_grad_check_detects_corruption():
    A = np.ones((2, 2))
    f = lambda params: (float(np.sum(A * params["W"])), {"W": A.copy()})
    assert nn.grad_check(f, {"W": np.zeros((2, 2))}, corrupt=True) > 1e-4


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    arrays = {"a": rng.normal(size=(3, 2)), "b": np.array([np.pi, -0.0, 1e-300])}
    meta = {"model": "x", "n": 3}
    path = tmp_path / "c.json"
    nn.save_checkpoint(path, meta, arrays)
    meta2, arrays2 = nn.load_checkpoint(path)
    assert meta2["model"] == "x"
    for k in arrays:
        assert arrays2[k].tobytes() == arrays[k].tobytes()
    first = path.read_bytes()
    nn.save_checkpoint(path, meta, arrays)
    assert path.read_bytes() == first


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=12),
    st.data(),
)
def test_masked_softmax_property(logits, data):
    n = len(logits)
    mask = data.draw(st.sets(st.integers(0, n - 1), min_size=1))
    d = nn.masked_softmax(np.array(logits), sorted(mask))
    assert all(d[i] == 0.0 for i in range(n) if i not in mask)
    assert abs(d[sorted(mask)].sum() - 1.0) <= 1e-12
