import math

import numpy as np
import pytest

from selfonn_ecg import nn

from conftest import numeric_grad, rel_err


def naive_conv1d(x, w, padding):
    B, C, L = x.shape
    O, _, K = w.shape
    left, right = padding
    xp = np.zeros((B, C, L + left + right))
    xp[:, :, left:left + L] = x
    Lout = L + left + right - K + 1
    out = np.zeros((B, O, Lout))
    for b in range(B):
        for o in range(O):
            for m in range(Lout):
                s = 0.0
                for c in range(C):
                    for r in range(K):
                        s += w[o, c, r] * xp[b, c, m + r]
                out[b, o, m] = s
    return out


def layer_grad_check(layer, x, train=False, seed=0):
    """Analytic vs numeric gradients of ``sum(g * layer(x))`` for input and params."""
    g = np.random.default_rng(seed).standard_normal(layer.forward(x, train).shape)

    def loss():
        return float(np.sum(g * layer.forward(x, train)))

    layer.forward(x, train)
    dx = layer.backward(g)
    grads = {k: v.copy() for k, v in layer.grads.items()}
    errs = {"x": rel_err(dx, numeric_grad(loss, x))}
    for k, p in layer.params.items():
        errs[k] = rel_err(grads[k], numeric_grad(loss, p))
    return errs


# ---------------------------------------------------------------------------
# conv1d

def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 1, 11))
    out, _ = nn.conv1d(x, np.ones((1, 1, 1)))
    np.testing.assert_array_equal(out, x)


def test_conv_impulse_response():
    x = np.zeros((1, 1, 9))
    x[0, 0, 4] = 1.0
    w = np.array([[[1.0, 2.0, 3.0]]])
    out, _ = nn.conv1d(x, w, nn.same_padding(3))
    # cross-correlation: the impulse reproduces the kernel reversed around the spike
    assert out[0, 0, 3:6].tolist() == [3.0, 2.0, 1.0]
    assert out.sum() == 6.0


@pytest.mark.parametrize("K,pad", [(1, (0, 0)), (3, (1, 1)), (4, (1, 2)), (5, (0, 0)), (7, (3, 3))])
def test_conv_matches_naive(K, pad):
    rng = np.random.default_rng(K)
    for _ in range(5):
        x = rng.standard_normal((2, 3, 17))
        w = rng.standard_normal((4, 3, K))
        out, _ = nn.conv1d(x, w, pad)
        assert np.max(np.abs(out - naive_conv1d(x, w, pad))) < 1e-12


def test_conv_same_padding_keeps_length():
    for k in (1, 2, 3, 4, 7):
        out, _ = nn.conv1d(np.ones((1, 2, 20)), np.ones((3, 2, k)), nn.same_padding(k))
        assert out.shape == (1, 3, 20)


def test_conv_gradients():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 12))
    w = rng.standard_normal((4, 3, 3))
    g = rng.standard_normal((2, 4, 12))
    out, cache = nn.conv1d(x, w, (1, 1))
    dx, dw = nn.conv1d_backward(g, cache)

    def loss():
        return float(np.sum(g * nn.conv1d(x, w, (1, 1))[0]))
    assert rel_err(dx, numeric_grad(loss, x)) < 1e-6
    assert rel_err(dw, numeric_grad(loss, w)) < 1e-6


def test_conv_shape_errors():
    with pytest.raises(nn.ShapeError):
        nn.conv1d(np.ones((1, 2, 5)), np.ones((1, 3, 3)))
    with pytest.raises(nn.ShapeError):
        nn.conv1d(np.ones((1, 1, 2)), np.ones((1, 1, 5)))


# ---------------------------------------------------------------------------
# pooling

def test_maxpool_lengths_and_constant():
    p = nn.MaxPool1d(7)
    out = p.forward(np.full((2, 3, 230), 4.0))
    assert out.shape == (2, 3, 32) and np.all(out == 4.0)


def test_maxpool_ties_lowest_index():
    p = nn.MaxPool1d(3)
    p.forward(np.array([[[1.0, 1.0, 0.0]]]))
    assert p.backward(np.ones((1, 1, 1))).tolist() == [[[1.0, 0.0, 0.0]]]


def test_maxpool_short_input():
    with pytest.raises(nn.ShapeError):
        nn.MaxPool1d(7).forward(np.ones((1, 1, 5)))


def test_pool_gradients():
    rng = np.random.default_rng(2)
    # distinct values keep finite differences away from ties
    x = rng.permutation(2 * 3 * 23).reshape(2, 3, 23).astype(float) / 10
    assert layer_grad_check(nn.MaxPool1d(7), x)["x"] < 1e-4
    assert layer_grad_check(nn.AdaptiveMaxPool1d(), x)["x"] < 1e-4


# ---------------------------------------------------------------------------
# dense and activations

def test_dense_identity():
    d = nn.Dense(4, 4, dtype=np.float64)
    d.params["weight"] = np.eye(4)
    x = np.random.default_rng(3).standard_normal((5, 4))
    np.testing.assert_array_equal(d.forward(x), x)


def test_dense_gradients():
    d = nn.Dense(5, 3, np.random.default_rng(4), dtype=np.float64)
    d.params["bias"] = np.random.default_rng(5).standard_normal(3)
    errs = layer_grad_check(d, np.random.default_rng(6).standard_normal((4, 5)))
    assert max(errs.values()) < 1e-6


def test_activation_values():
    assert nn.Tanh().forward(np.zeros((1, 1)))[0, 0] == 0.0
    assert nn.ReLU().forward(np.array([[-1.0]]))[0, 0] == 0.0


def test_activation_gradients():
    x = np.random.default_rng(7).standard_normal((3, 8))
    x[np.abs(x) < 1e-3] = 0.5
    assert layer_grad_check(nn.Tanh(), x.copy())["x"] < 1e-6
    assert layer_grad_check(nn.ReLU(), x.copy())["x"] < 1e-6


# ---------------------------------------------------------------------------
# batch norm

def test_batchnorm_normalized_input_passthrough():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((64, 4, 10))
    x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
    bn = nn.BatchNorm1d(4, dtype=np.float64)
    y = bn.forward(x, train=True)
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5), atol=1e-12)


def test_batchnorm_eval_affine_composition():
    bn = nn.BatchNorm1d(2, dtype=np.float64)
    bn.running_mean[:] = [1.0, -2.0]
    bn.running_var[:] = [4.0, 0.25]
    x = np.random.default_rng(9).standard_normal((3, 2))
    s = 1 / np.sqrt(bn.running_var + bn.eps)
    twice = bn.forward(bn.forward(x))
    np.testing.assert_allclose(twice, ((x - bn.running_mean) * s - bn.running_mean) * s, atol=1e-12)


def test_batchnorm_running_stats():
    x = np.random.default_rng(10).normal(3.0, 2.0, (8, 2, 5))
    bn = nn.BatchNorm1d(2, dtype=np.float64)
    bn.forward(x, train=True)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 2)))
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=(0, 2), ddof=1))


@pytest.mark.parametrize("shape", [(6, 3, 7), (5, 4)])
def test_batchnorm_gradients(shape):
    rng = np.random.default_rng(11)
    bn = nn.BatchNorm1d(shape[1], dtype=np.float64)
    bn.params["gamma"] = rng.uniform(0.5, 1.5, shape[1])
    bn.params["beta"] = rng.standard_normal(shape[1])
    errs = layer_grad_check(bn, rng.standard_normal(shape), train=True)
    assert max(errs.values()) < 1e-4
    errs = layer_grad_check(bn, rng.standard_normal(shape), train=False)
    assert max(errs.values()) < 1e-6


def test_batchnorm_single_sample_training():
    with pytest.raises(nn.ShapeError):
        nn.BatchNorm1d(2).forward(np.ones((1, 2, 3)), train=True)


# ---------------------------------------------------------------------------
# softmax cross-entropy

def test_uniform_logits_loss():
    loss, _ = nn.softmax_cross_entropy(np.zeros((1, 3)), [1])
    assert loss == pytest.approx(math.log(3))


def test_confident_logits_loss():
    loss, _ = nn.softmax_cross_entropy(np.array([[0.0, 800.0, 0.0]]), [1])
    assert loss == 0.0


def test_loss_is_summed():
    logits = np.random.default_rng(12).standard_normal((5, 3))
    total, _ = nn.softmax_cross_entropy(logits, [0, 1, 2, 0, 1])
    parts = sum(nn.softmax_cross_entropy(logits[i:i + 1], [l])[0] for i, l in enumerate([0, 1, 2, 0, 1]))
    assert total == pytest.approx(parts, rel=1e-12)


def test_softmax_sums_to_one():
    p = nn.softmax(np.random.default_rng(13).standard_normal((50, 3)) * 30)
    assert np.max(np.abs(p.sum(axis=1) - 1)) < 1e-12


def test_loss_gradient():
    logits = np.random.default_rng(14).standard_normal((4, 3))
    labels = [2, 0, 1, 1]
    _, d = nn.softmax_cross_entropy(logits, labels)
    num = numeric_grad(lambda: nn.softmax_cross_entropy(logits, labels)[0], logits)
    assert rel_err(d, num) < 1e-6


# ---------------------------------------------------------------------------
# engine hygiene

def test_backward_without_forward():
    with pytest.raises(nn.StaleCacheError):
        nn.Tanh().backward(np.ones((1, 1)))


def test_check_finite():
    with pytest.raises(nn.NonFiniteError):
        nn.check_finite(np.array([1.0, np.nan]), "test")


def test_forward_deterministic():
    rng = np.random.default_rng(15)
    x, w = rng.standard_normal((4, 9, 230)), rng.standard_normal((32, 9, 3))
    a, _ = nn.conv1d(x, w, (1, 1))
    b, _ = nn.conv1d(x, w, (1, 1))
    assert np.array_equal(a, b)
