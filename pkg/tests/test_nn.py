import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import graph_of, random_pairs
from trollgraph import nn


def f64(a):
    return np.asarray(a, dtype=np.float64)


def test_linear_examples():
    x = f64([[1, 2]])
    np.testing.assert_array_equal(nn.linear(x, np.eye(2), np.zeros(2)), x)
    np.testing.assert_array_equal(nn.linear(x, np.eye(2), np.ones(2)), [[2, 3]])


def test_linear_shape_error_names_shapes():
    with pytest.raises(nn.ShapeError, match=r"\(1, 2\)"):
        nn.linear(f64([[1, 2]]), np.eye(3), np.zeros(3))


def test_activations():
    assert list(nn.activation(f64([-1, 2]), "relu")) == [0, 2]
    assert nn.activation(f64([0]), "sigmoid")[0] == 0.5
    assert nn.activation(f64([0]), "tanh")[0] == 0.0


def linear_model(x, kind):
    def fn(p):
        pre = nn.linear(x, p["W"], p["b"])
        y = nn.activation(pre, kind)
        loss = float((y ** 2).sum() / 2)
        d = nn.activation_backward(y, pre, y, kind)
        dx, gW, gb = nn.linear_backward(d, x, p["W"])
        return loss, {"W": gW, "b": gb}
    return fn


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "relu"])
def test_linear_activation_grads(kind):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 3))
    p = {"W": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}
    assert nn.grad_check(linear_model(x, kind), p, tol=1e-4, h=1e-3 if kind != "relu" else 1e-6).passed


def test_linear_input_grad():
    rng = np.random.default_rng(4)
    W, b = rng.normal(size=(3, 2)), rng.normal(size=2)

    def fn(p):
        y = nn.linear(p["x"], W, b)
        dx, _, _ = nn.linear_backward(y, p["x"], W)
        return float((y ** 2).sum() / 2), {"x": dx}

    assert nn.grad_check(fn, {"x": rng.normal(size=(4, 3))}, h=1e-3).passed


def test_mean_aggregate_examples():
    g = graph_of([(0, 1), (1, 2)], n=4)
    M = nn.mean_aggregate(g, f64([[1], [2], [3], [4]]))
    assert M[1, 0] == 2 and M[3, 0] == 0


def test_mean_aggregate_brute_force():
    rng = np.random.default_rng(5)
    pairs = random_pairs(rng, 20, 45)
    g = graph_of(pairs, 20)
    H = rng.normal(size=(20, 5)).astype(np.float32)
    nb = [set() for _ in range(20)]
    for u, v in pairs:
        nb[u].add(v)
        nb[v].add(u)
    want = np.array([H[sorted(s)].mean(axis=0) if s else np.zeros(5) for s in nb])
    assert np.abs(nn.mean_aggregate(g, H) - want).max() < 1e-6


def test_mean_aggregate_backward_is_adjoint():
    rng = np.random.default_rng(6)
    g = graph_of(random_pairs(rng, 12, 30), 12)
    agg = nn.MeanAggregator.from_graph(g, dtype=np.float64)
    H, dM = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
    assert np.sum(agg(H) * dM) == pytest.approx(np.sum(H * agg.backward(dM)))


def gru_params(rng, i, h, scale=0.5):
    return {k: rng.normal(scale=scale, size=v.shape) for k, v in nn.init_gru(rng, i, h, np.float64).items()}


def test_gru_zero_fixed_point():
    p = {k: np.zeros_like(v) for k, v in nn.init_gru(np.random.default_rng(0), 3, 4, np.float64).items()}
    h, _ = nn.gru_cell(np.ones((2, 3)), np.zeros((2, 4)), p)
    assert not h.any()


def test_gru_grads():
    rng = np.random.default_rng(7)
    x, h0 = rng.normal(size=(3, 4)), rng.normal(size=(3, 5))
    target = rng.normal(size=(3, 5))

    def fn(p):
        h, cache = nn.gru_cell(p.get("x", x), p.get("h0", h0), p)
        d = h - target
        dx, dh, g = nn.gru_cell_backward(d, cache, p)
        g["x"], g["h0"] = dx, dh
        return float((d ** 2).sum() / 2), g

    p = gru_params(rng, 4, 5)
    p["x"], p["h0"] = x.copy(), h0.copy()
    assert nn.grad_check(fn, p, h=1e-5).passed


def test_gru_converges_on_constant_input():
    rng = np.random.default_rng(8)
    p = gru_params(rng, 3, 4, scale=0.3)
    x = rng.normal(size=(1, 3))
    h = np.zeros((1, 4))
    steps = []
    for _ in range(30):
        new, _ = nn.gru_cell(x, h, p)
        steps.append(np.linalg.norm(new - h))
        h = new
    assert steps[-1] < steps[0] * 1e-2
    assert all(b <= a + 1e-12 for a, b in zip(steps[5:], steps[6:]))


def test_gru_shape_error():
    p = nn.init_gru(np.random.default_rng(0), 3, 4)
    with pytest.raises(nn.ShapeError):
        nn.gru_cell(np.ones((2, 2)), np.zeros((2, 4)), p)


def test_loss_values():
    assert nn.cross_entropy_2class(f64([[0, 0]]), np.array([1]))[0] == pytest.approx(np.log(2))
    assert nn.binary_cross_entropy(f64([0.5]), f64([1]))[0] == pytest.approx(np.log(2))
    with pytest.raises(ValueError):
        nn.loss(np.zeros((0, 2)), np.zeros(0, int), "cross_entropy_2class")
    with pytest.raises(ValueError):
        nn.binary_cross_entropy(np.zeros(0), np.zeros(0))


def test_bce_clamped_finite():
    loss, d = nn.binary_cross_entropy(f64([0.0, 1.0]), f64([1, 0]))
    assert np.isfinite(loss) and np.isfinite(d).all()


def test_loss_grads():
    rng = np.random.default_rng(9)
    y = rng.integers(0, 2, 6)
    assert nn.grad_check(lambda p: (lambda l, d: (l, {"z": d}))(*nn.cross_entropy_2class(p["z"], y)),
                         {"z": rng.normal(size=(6, 2))}, h=1e-5).passed
    yb = rng.integers(0, 2, 6).astype(float)
    assert nn.grad_check(lambda p: (lambda l, d: (l, {"p": d}))(*nn.binary_cross_entropy(p["p"], yb)),
                         {"p": rng.uniform(0.1, 0.9, 6)}, h=1e-6).passed


def test_adam_first_step():
    p = {"a": np.zeros(1, np.float32), "b": np.zeros(1, np.float32)}
    states = {}
    nn.adam_step(p, {"a": np.ones(1, np.float32), "b": np.zeros(1, np.float32)}, states, 0.001)
    # m_hat = 1, v_hat = 1 after bias correction: step = lr / (1 + eps)
    assert p["a"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-6)
    assert p["a"][0] == pytest.approx(-0.000999999, abs=2e-9)
    assert p["b"][0] == 0.0
    assert states["a"].t == 1 and not states["b"].m.any()


def test_adam_zero_grad_keeps_param():
    p = {"a": np.full(3, 2.0, np.float32)}
    states = {}
    for _ in range(5):
        nn.adam_step(p, {"a": np.zeros(3, np.float32)}, states, 0.01)
    assert np.all(p["a"] == 2.0)


def test_grad_check_constant_function():
    rep = nn.grad_check(lambda p: (3.0, {"w": np.zeros(4)}), {"w": np.ones(4)})
    assert rep.passed and rep.max_rel_err == 0.0


def test_grad_check_detects_wrong_backward():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(4, 3))
    good = linear_model(x, "tanh")

    def bad(p):
        loss, g = good(p)
        return loss, {"W": g["W"] * 1.1, "b": g["b"]}

    assert not nn.grad_check(bad, {"W": rng.normal(size=(3, 2)), "b": np.zeros(2)}).passed


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_linear_tanh_grads_random_shapes(n, i, o, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, i))
    p = {"W": rng.normal(size=(i, o)), "b": rng.normal(size=o)}
    assert nn.grad_check(linear_model(x, "tanh"), p, h=1e-5).passed


@settings(max_examples=20, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=8),
                       st.lists(st.integers(1, 4), min_size=0, max_size=3), max_size=4),
       st.integers(0, 2**31 - 1))
def test_checkpoint_bit_exact(shapes, seed):
    rng = np.random.default_rng(seed)
    tensors = {k: rng.normal(size=s).astype(np.float32) for k, s in shapes.items()}
    buf = nn.dump_tensors(tensors)
    back, end = nn.load_tensors(buf)
    assert end == len(buf) and list(back) == list(tensors)
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes() and back[k].shape == tensors[k].shape
    assert nn.dump_tensors(back) == buf


def test_checkpoint_bad_magic():
    with pytest.raises(ValueError):
        nn.load_tensors(b"NOPE" + bytes(8))


def test_glorot_bound():
    w = nn.glorot(np.random.default_rng(0), 30, 20)
    assert np.abs(w).max() <= np.sqrt(6 / 50) and w.dtype == np.float32
