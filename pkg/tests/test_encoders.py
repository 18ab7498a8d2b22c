import io

import numpy as np
import pytest

from pmvge.encoders import (
    EncoderStack,
    LayerSpec,
    backward,
    forward,
    init_params,
    linear_specs,
    load_encoders,
    mlp_specs,
    read_encoders,
    save_encoders,
    write_encoders,
)
from pmvge.errors import DimensionMismatchError, ValidationError

# denominators below this are treated as absolute error
REL_FLOOR = 1e-3


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR))


def fd_grad(f, flat, h=1e-5):
    g = np.zeros_like(flat)
    for k in range(len(flat)):
        old = flat[k]
        flat[k] = old + h
        up = f()
        flat[k] = old - h
        dn = f()
        flat[k] = old
        g[k] = (up - dn) / (2 * h)
    return g


def test_identity_layer():
    stack = EncoderStack([linear_specs(2, 2)], [[(np.eye(2), np.zeros(2))]])
    np.testing.assert_array_equal(forward(stack, 1, [1.0, 2.0]), [1.0, 2.0])


def test_zero_tanh():
    stack = EncoderStack([mlp_specs(3, [4], 2, "tanh")], [[(np.zeros((4, 3)), np.zeros(4)), (np.zeros((2, 4)), np.zeros(2))]])
    np.testing.assert_array_equal(forward(stack, 1, [1.0, -2.0, 3.0]), np.zeros(2))


def test_scalar_tanh():
    stack = EncoderStack([[LayerSpec(1, 1, "tanh")]], [[(np.ones((1, 1)), np.zeros(1))]])
    np.testing.assert_allclose(forward(stack, 1, [0.5]), [0.4621171573], atol=1e-10)


def test_linear_encoder_is_matmul():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(3, 5))
    stack = EncoderStack([linear_specs(5, 3)], [[(W, np.zeros(3))]])
    X = rng.normal(size=(20, 5))
    np.testing.assert_allclose(stack.forward(1, X), X @ W.T, rtol=0, atol=1e-14)


def test_init_deterministic_and_bounded():
    specs = [mlp_specs(4, [6], 3), mlp_specs(2, [5], 3)]
    a, b, c = init_params(specs, 7), init_params(specs, 7), init_params(specs, 8)
    np.testing.assert_array_equal(a.flatten(), b.flatten())
    assert np.any(a.flatten() != c.flatten())
    for chain, view in zip(specs, a.params):
        for s, (W, bias) in zip(chain, view):
            assert np.all(np.abs(W) <= np.sqrt(6 / (s.in_dim + s.out_dim)))
            assert np.all(bias == 0)


def test_spec_chain_errors():
    with pytest.raises(ValidationError):
        init_params([[LayerSpec(2, 3), LayerSpec(4, 2)]], 0)
    with pytest.raises(ValidationError):
        init_params([linear_specs(2, 3), linear_specs(2, 4)], 0)
    with pytest.raises(ValidationError):
        LayerSpec(2, 3, "softplus")
    stack = init_params([linear_specs(2, 3)], 0)
    with pytest.raises(DimensionMismatchError):
        stack.forward(1, np.zeros(3))


def test_zero_upstream_gradient():
    stack = init_params([mlp_specs(3, [4], 2)], 1)
    grads = backward(stack, 1, np.ones(3), np.zeros(2))
    assert all(np.all(dW == 0) and np.all(db == 0) for dW, db in grads)


def test_identity_layer_gradient():
    rng = np.random.default_rng(2)
    x, g = rng.normal(size=4), rng.normal(size=3)
    stack = EncoderStack([[LayerSpec(4, 3, "identity")]], [[(rng.normal(size=(3, 4)), np.zeros(3))]])
    (dW, db), = backward(stack, 1, x, g)
    # W is stored out x in, so d<Wx, g>/dW = g x^T
    np.testing.assert_allclose(dW, np.outer(g, x), atol=1e-15)
    np.testing.assert_allclose(db, g, atol=1e-15)


@pytest.mark.parametrize("activation", ["tanh", "sigmoid", "relu", "identity"])
def test_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng({"tanh": 0, "sigmoid": 1, "relu": 2, "identity": 3}[activation])
    worst = 0.0
    checked = 0
    while checked < 100:
        p, h, K = (int(v) for v in rng.integers(1, 5, size=3))
        stack = init_params([mlp_specs(p, [h], K, activation, activation)], int(rng.integers(2**31)))
        for a in stack.arrays():
            a += rng.normal(scale=0.3, size=a.shape)
        X = rng.uniform(-1, 1, size=(3, p))
        G = rng.normal(size=(3, K))
        if activation == "relu":
            # stay clear of the kinks
            zs = [c[0] for c in stack.forward(1, X, keep=True)[1][1:]]
            if min(np.abs(z).min() for z in zs) < 1e-3:
                continue
        flat = stack.flatten()
        view = stack.arrays()

        def loss():
            stack.assign(flat)
            return float(np.sum(stack.forward(1, X) * G))

        num = fd_grad(loss, flat)
        stack.assign(flat)
        _, cache = stack.forward(1, X, keep=True)
        grads, dX = stack.backward(1, cache, G, input_grad=True)
        ana = np.concatenate([a.ravel() for layer in grads for a in layer])
        assert len(view) == 2 * len(grads)
        worst = max(worst, rel_err(ana, num))

        def loss_x():
            return float(np.sum(stack.forward(1, Xv.reshape(X.shape)) * G))

        Xv = X.ravel().copy()
        worst = max(worst, rel_err(dX.ravel(), fd_grad(loss_x, Xv)))
        checked += 1
    assert worst < 1e-5


def test_relu_derivative_at_zero():
    stack = EncoderStack([[LayerSpec(1, 1, "relu")]], [[(np.ones((1, 1)), np.zeros(1))]])
    (dW, db), = backward(stack, 1, np.zeros(1), np.ones(1))
    assert dW[0, 0] == 0 and db[0] == 0


def test_forward_is_pure():
    stack = init_params([mlp_specs(3, [8], 2)], 3)
    x = np.array([0.1, -0.2, 0.3])
    assert np.array_equal(stack.forward(1, x), stack.forward(1, x))


def test_checkpoint_round_trip(tmp_path):
    stack = init_params([mlp_specs(3, [4], 2, "relu", "identity"), linear_specs(5, 2)], 11)
    path = tmp_path / "enc.bin"
    save_encoders(path, stack)
    back = load_encoders(path)
    assert back.specs == stack.specs
    np.testing.assert_array_equal(back.flatten(), stack.flatten())
    assert "view 1 layer 0 3 -> 4 relu" in (tmp_path / "enc.bin.dims.txt").read_text()
    raw = path.read_bytes()
    assert raw[:8] == b"PMVGEENC"
    with pytest.raises(ValidationError):
        read_encoders(io.BytesIO(b"XXXXXXXX" + raw[8:]))
    with pytest.raises(ValidationError):
        read_encoders(io.BytesIO(raw[:-4]))
    buf = io.BytesIO()
    write_encoders(buf, stack)
    assert buf.getvalue() == raw
