import numpy as np
import pytest

from koopcar.mlp import (AdamState, LayerSpec, MlpNetwork, adam_step,
                         backward, fit_normalizer, forward, mlp_specs)


def net_from_arrays(layers):
    """Build a network from explicit (W, b_or_None, activation) triples."""
    specs = []
    chunks = []
    for w, b, act in layers:
        specs.append(LayerSpec(w.shape[1], w.shape[0], act, has_bias=b is not None))
        chunks.append(w.ravel())
        if b is not None:
            chunks.append(b)
    return MlpNetwork(tuple(specs), np.concatenate(chunks).astype(np.float64))


# ---------------------------------------------------------------------------
# forward

def test_identity_linear_layer():
    net = net_from_arrays([(np.eye(4), np.zeros(4), "linear")])
    x = np.array([0.3, -1.2, 5.0, 0.0])
    y, _ = forward(net, x)
    assert np.array_equal(y, x)


def test_tanh_layer_at_zero_weights():
    net = net_from_arrays([(np.zeros((3, 2)), np.zeros(3), "tanh")])
    y, _ = forward(net, np.array([0.7, -0.4]))
    assert np.array_equal(y, np.zeros(3))


def test_two_layer_frozen_oracle():
    # value frozen from an independent hand-rolled forward pass
    w1 = np.array([[0.1, -0.2], [0.3, 0.05], [-0.15, 0.25]])
    b1 = np.array([0.01, -0.02, 0.03])
    w2 = np.array([[0.5, -0.4, 0.2]])
    b2 = np.array([0.1])
    net = net_from_arrays([(w1, b1, "tanh"), (w2, b2, "linear")])
    y, _ = forward(net, np.array([0.7, -0.3]))
    assert abs(y[0] - 0.070475154080701388) < 1e-15


def test_forward_batch_matches_single_rows():
    # same values up to BLAS kernel reassociation (gemm vs gemv)
    rng = np.random.default_rng(0)
    net = MlpNetwork.create(mlp_specs((3, 5, 2)), rng)
    xb = rng.normal(size=(6, 3))
    yb, _ = forward(net, xb)
    for i in range(6):
        yi, _ = forward(net, xb[i])
        assert np.allclose(yb[i], yi, rtol=1e-14, atol=1e-15)


def test_forward_dim_mismatch():
    net = MlpNetwork.create(mlp_specs((3, 4, 2)), np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(net, np.zeros(5))


def test_forward_determinism():
    rng = np.random.default_rng(1)
    net = MlpNetwork.create(mlp_specs((4, 8, 8, 3)), rng)
    x = np.random.default_rng(2).normal(size=(10, 4))
    y1, _ = forward(net, x)
    y2, _ = forward(net, x)
    assert np.array_equal(y1, y2)


def test_layer_chain_validation():
    with pytest.raises(ValueError):
        MlpNetwork((LayerSpec(3, 4), LayerSpec(5, 2)), np.zeros(16 + 4 + 10 + 2))


# ---------------------------------------------------------------------------
# backward

def test_zero_output_grad_gives_zero_gradients():
    rng = np.random.default_rng(3)
    net = MlpNetwork.create(mlp_specs((3, 6, 2)), rng)
    _, cache = forward(net, rng.normal(size=(4, 3)))
    grad, gx = backward(net, cache, np.zeros((4, 2)))
    assert np.all(grad == 0.0)
    assert np.all(gx == 0.0)


def test_linear_layer_closed_form_gradient():
    w = np.array([[0.5, -0.2, 0.1], [0.0, 0.3, -0.4]])
    net = net_from_arrays([(w, None, "linear")])
    x = np.array([1.0, -2.0, 0.5])
    _, cache = forward(net, x)
    g_out = np.array([2.0, -1.0])
    grad, gx = backward(net, cache, g_out)
    assert np.allclose(grad.reshape(2, 3), np.outer(g_out, x), atol=1e-15)
    assert np.allclose(gx, w.T @ g_out, atol=1e-15)


def _fd_check(net, x, h=1e-5):
    """Relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(99)
    c = rng.normal(size=net.out_dim)  # fixed linear readout -> scalar loss

    def loss(theta):
        probe = MlpNetwork(net.specs, theta)
        y, _ = forward(probe, x)
        return float(np.sum(y @ c))

    _, cache = forward(net, x)
    grad, _ = backward(net, cache, np.tile(c, (x.shape[0], 1)))
    worst = 0.0
    for i in range(net.theta.size):
        tp = net.theta.copy(); tp[i] += h
        tm = net.theta.copy(); tm[i] -= h
        fd = (loss(tp) - loss(tm)) / (2 * h)
        worst = max(worst, abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-8))
    return worst


def test_three_layer_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    net = MlpNetwork.create(mlp_specs((4, 8, 6, 3)), rng)
    x = rng.normal(size=(5, 4))
    assert _fd_check(net, x) < 1e-6


def test_gradient_property_over_random_structures():
    # contract: any net up to 4 layers with dims up to 16 checks out below 1e-6
    rng = np.random.default_rng(7)
    for trial in range(6):
        n_layers = int(rng.integers(1, 5))
        dims = [int(rng.integers(1, 17)) for _ in range(n_layers + 1)]
        acts = ["tanh" if rng.random() < 0.7 else "relu"] * (n_layers - 1) + ["linear"]
        specs = tuple(LayerSpec(dims[j], dims[j + 1], acts[j],
                                has_bias=bool(rng.random() < 0.8))
                      for j in range(n_layers))
        net = MlpNetwork.create(specs, rng)
        x = rng.normal(size=(3, dims[0]))
        assert _fd_check(net, x) < 1e-6, f"trial {trial}: {specs}"


def test_backward_shape_mismatch():
    rng = np.random.default_rng(5)
    net = MlpNetwork.create(mlp_specs((3, 4, 2)), rng)
    _, cache = forward(net, rng.normal(size=(4, 3)))
    with pytest.raises(ValueError):
        backward(net, cache, np.zeros((4, 3)))


# ---------------------------------------------------------------------------
# Adam

def test_adam_zero_gradient_keeps_params():
    params = np.array([1.0, -2.0, 3.0])
    state = AdamState.create(3)
    new, new_state = adam_step(params, np.zeros(3), state)
    assert np.array_equal(new, params)
    assert new_state.step == 1


def test_adam_first_step_is_signed_learning_rate():
    rng = np.random.default_rng(8)
    g = rng.normal(size=20)
    g[np.abs(g) < 0.1] += 0.5  # keep |g| well above eps
    params = np.zeros(20)
    state = AdamState.create(20, lr=1e-3)
    new, _ = adam_step(params, g, state)
    assert np.all(np.abs(new - (-1e-3 * np.sign(g))) < 1e-9)


def test_adam_descends_a_quadratic():
    theta = np.array([2.0])
    state = AdamState.create(1, lr=0.1)
    losses = []
    for _ in range(2):
        losses.append(0.5 * theta[0] ** 2)
        theta, state = adam_step(theta, theta.copy(), state)
    assert 0.5 * theta[0] ** 2 < losses[0]
    assert losses[1] < losses[0]


def test_adam_rejects_nonfinite_gradient():
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.array([1.0, float("nan")]),
                  AdamState.create(2))


# ---------------------------------------------------------------------------
# normalizer

def test_normalizer_endpoints():
    norm = fit_normalizer(np.array([[0.0, -3.0], [10.0, 5.0], [5.0, 1.0]]))
    assert np.array_equal(norm.apply(np.array([0.0, -3.0])), [-1.0, -1.0])
    assert np.array_equal(norm.apply(np.array([10.0, 5.0])), [1.0, 1.0])


def test_normalizer_roundtrip():
    rng = np.random.default_rng(9)
    data = rng.uniform(-5, 20, size=(50, 4))
    norm = fit_normalizer(data)
    x = rng.uniform(data.min(axis=0), data.max(axis=0), size=(30, 4))
    assert np.allclose(norm.invert(norm.apply(x)), x, atol=1e-12)


def test_normalizer_constant_channel_rule():
    norm = fit_normalizer(np.array([[5.0, 1.0], [5.0, 2.0]]))
    out = norm.apply(np.array([5.0, 1.5]))
    assert out[0] == 0.0
    assert norm.invert(np.array([0.0, 0.0]))[0] == 5.0


def test_normalizer_rejects_empty():
    with pytest.raises(ValueError):
        fit_normalizer(np.zeros((0, 3)))


def test_normalizer_select_subset():
    norm = fit_normalizer(np.array([[0.0, 10.0, -1.0], [2.0, 20.0, 1.0]]))
    sub = norm.select(slice(0, 2))
    assert np.array_equal(sub.lo, [0.0, 10.0])
    assert np.array_equal(sub.hi, [2.0, 20.0])
