import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gromov_gap.errors import DimensionMismatch, DomainError
from gromov_gap.net import (MlpParams, TrainState, adam_step, init_mlp, load_params, mlp_backward,
                            mlp_forward, params_from_json, params_to_json, save_params)

from oracles import naive_mlp, rel_err


def test_zero_network_outputs_zero():
    p = init_mlp([3, 4, 2], 0).zeros_like()
    assert np.all(mlp_forward(p, np.ones((5, 3))) == 0.0)


def test_linear_layer():
    w = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
    p = MlpParams([(w, np.zeros(3))])
    x = np.random.default_rng(0).normal(size=(4, 2))
    assert np.array_equal(mlp_forward(p, x), x @ w.T)
    cot = np.random.default_rng(1).normal(size=(4, 3))
    grads, gx = mlp_backward(p, x, cot)
    assert np.allclose(grads.layers[0][0], cot.T @ x, rtol=0, atol=1e-15)
    assert np.allclose(gx, cot @ w, rtol=0, atol=1e-15)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_forward_matches_naive_loops(activation):
    p = init_mlp([3, 5, 4, 2], 7, activation)
    x = np.random.default_rng(2).normal(size=(6, 3))
    ref = naive_mlp([(w.tolist(), b.tolist()) for w, b in p.layers], activation, x)
    assert np.abs(mlp_forward(p, x) - ref).max() < 1e-12


def test_zero_cotangent():
    p = init_mlp([3, 8, 2], 1)
    grads, gx = mlp_backward(p, np.ones((4, 3)), np.zeros((4, 2)))
    assert np.all(grads.flat() == 0.0) and np.all(gx == 0.0)


def test_shape_errors():
    p = init_mlp([3, 4, 2], 0)
    with pytest.raises(DimensionMismatch):
        mlp_forward(p, np.ones((2, 4)))
    with pytest.raises(DimensionMismatch):
        mlp_backward(p, np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        MlpParams([(np.ones((4, 3)), np.ones(4)), (np.ones((2, 5)), np.ones(2))])
    with pytest.raises(DomainError):
        MlpParams([(np.full((2, 2), np.nan), np.ones(2))])
    with pytest.raises(DomainError):
        init_mlp([3, 2], 0, "sigmoid")


def test_init_bounds():
    p = init_mlp([4, 16, 2], 3)
    assert np.abs(p.layers[0][0]).max() <= 0.5 and np.abs(p.layers[1][0]).max() <= 0.25
    assert p.input_dim == 4 and p.output_dim == 2


def _pullback_fd(p, x, cot, h=1e-6):
    flat = p.flat()
    out = np.zeros_like(flat)
    for k in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[k] += h
        down[k] -= h
        out[k] = (np.sum(cot * mlp_forward(p.unflatten(up), x)) - np.sum(cot * mlp_forward(p.unflatten(down), x))) / (2 * h)
    return out


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    p = init_mlp([3, 6, 5, 2], 5)
    x, cot = rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
    grads, gx = mlp_backward(p, x, cot)
    assert rel_err(grads.flat(), _pullback_fd(p, x, cot)) < 1e-6
    fd_x = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            up, down = x.copy(), x.copy()
            up[i, j] += 1e-6
            down[i, j] -= 1e-6
            fd_x[i, j] = (np.sum(cot * mlp_forward(p, up)) - np.sum(cot * mlp_forward(p, down))) / 2e-6
    assert rel_err(gx, fd_x) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["tanh", "relu"]))
def test_directional_derivative(seed, activation):
    rng = np.random.default_rng(seed)
    p = init_mlp([3, 6, 2], seed % 1000, activation)
    x, cot = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    v = rng.normal(size=p.flat().size)
    h = 1e-6
    f = lambda q: float(np.sum(cot * mlp_forward(p.unflatten(q), x)))
    fd = (f(p.flat() + h * v) - f(p.flat() - h * v)) / (2 * h)
    grads, _ = mlp_backward(p, x, cot)
    exact = float(grads.flat() @ v)
    assert abs(fd - exact) <= 1e-6 * max(abs(exact), 1.0)


def test_adam_zero_gradient():
    p = init_mlp([2, 3, 1], 0)
    s = adam_step(TrainState.fresh(p), p.zeros_like(), lr=1e-2)
    assert np.array_equal(s.params.flat(), p.flat()) and s.step == 1


def test_adam_first_step_and_constant_gradient():
    p = init_mlp([2, 3, 1], 0)
    g = p.unflatten(np.random.default_rng(1).normal(size=p.flat().size))
    lr, eps = 1e-3, 1e-8
    s = adam_step(TrainState.fresh(p), g, lr=lr, eps=eps)
    expected = -lr * g.flat() / (np.abs(g.flat()) + eps)
    assert np.allclose(s.params.flat() - p.flat(), expected, rtol=1e-12, atol=0)
    # with a fixed gradient the bias-corrected moments are exact, so every step moves -lr * sign(g)
    prev = s
    for _ in range(50):
        nxt = adam_step(prev, g, lr=lr, eps=eps)
        prev_flat = prev.params.flat()
        prev = nxt
    assert np.allclose(prev.params.flat() - prev_flat, -lr * np.sign(g.flat()), rtol=1e-6, atol=1e-12)
    assert prev.step == 51


def test_adam_does_not_mutate_input():
    p = init_mlp([2, 3, 1], 0)
    state = TrainState.fresh(p)
    before = p.flat().copy()
    adam_step(state, p, lr=0.1)
    assert np.array_equal(state.params.flat(), before) and state.step == 0


def test_adam_shape_error():
    with pytest.raises(DimensionMismatch):
        adam_step(TrainState.fresh(init_mlp([2, 3, 1], 0)), init_mlp([2, 4, 1], 0), lr=0.1)


def test_determinism():
    def run():
        p = init_mlp([3, 8, 2], 11)
        s = TrainState.fresh(p)
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=(4, 3))
            grads, _ = mlp_backward(s.params, x, mlp_forward(s.params, x))
            s = adam_step(s, grads, lr=1e-2)
        return s.params.flat()
    assert np.array_equal(run(), run())


def test_json_roundtrip(tmp_path):
    p = init_mlp([3, 5, 2], 9, "relu")
    q = params_from_json(params_to_json(p))
    assert q.activation == "relu" and np.array_equal(q.flat(), p.flat())
    path = tmp_path / "params.json"
    save_params(p, path)
    assert np.array_equal(load_params(path).flat(), p.flat())
    assert params_to_json(load_params(path)) == params_to_json(p)


def test_unflatten_size_check():
    p = init_mlp([2, 2], 0)
    with pytest.raises(DimensionMismatch):
        p.unflatten(np.zeros(99))
