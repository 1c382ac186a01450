"""Small reverse-mode tensor engine for a fixed chain of 1D layers.

Each layer keeps the cache of its last forward pass; ``backward`` consumes it.
Tensors are ``(batch, channels, length)`` or ``(batch, features)`` numpy
arrays. Layers compute in the dtype of their parameters (float64 for
gradient checks, float32 for training).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """backward() called without a matching forward()."""


class NonFiniteError(FloatingPointError):
    pass


def check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values after {where}")
    return x


def same_padding(k):
    left = (k - 1) // 2
    return left, k - 1 - left


# ---------------------------------------------------------------------------
# functional ops

def conv1d(x, w, padding=(0, 0)):
    """Cross-correlation ``out[b,o,m] = sum_{c,r} w[o,c,r] * xpad[b,c,m+r]``.

    Returns ``(out, cache)``.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernels {w.shape}")
    if isinstance(padding, int):
        padding = (padding, padding)
    B, C, L = x.shape
    O, _, K = w.shape
    left, right = padding
    if K > L + left + right:
        raise ShapeError(f"kernel size {K} exceeds padded length {L + left + right}")
    xp = np.pad(x, ((0, 0), (0, 0), (left, right))) if left or right else x
    Lout = xp.shape[2] - K + 1
    cols = sliding_window_view(xp, K, axis=2)             # (B, C, Lout, K)
    cols = cols.transpose(0, 2, 1, 3).reshape(B * Lout, C * K)
    w2 = w.reshape(O, C * K)
    out = (cols @ w2.T).reshape(B, Lout, O).transpose(0, 2, 1)
    return np.ascontiguousarray(out), (cols, w, x.shape, padding)


def conv1d_backward(grad, cache):
    """Gradients ``(dx, dw)`` of :func:`conv1d`."""
    cols, w, xshape, (left, right) = cache
    B, C, L = xshape
    O, _, K = w.shape
    Lout = grad.shape[2]
    g2 = grad.transpose(0, 2, 1).reshape(B * Lout, O)
    dw = (g2.T @ cols).reshape(O, C, K)
    dcols = (g2 @ w.reshape(O, C * K)).reshape(B, Lout, C, K)
    dxp = np.zeros((B, C, L + left + right), dtype=grad.dtype)
    for r in range(K):
        dxp[:, :, r:r + Lout] += dcols[:, :, :, r].transpose(0, 2, 1)
    return dxp[:, :, left:left + L], dw


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Summed cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    rows = np.arange(len(labels))
    loss = -logp[rows, labels].sum()
    d = np.exp(logp)
    d[rows, labels] -= 1.0
    return float(loss), d


# ---------------------------------------------------------------------------
# layers

class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def _take_cache(self):
        if self._cache is None:
            raise StaleCacheError(f"{type(self).__name__}.backward called without forward")
        cache, self._cache = self._cache, None
        return cache

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def buffers(self):
        return {}


class MaxPool1d(Layer):
    """Non-overlapping max pooling; ties go to the lowest index."""

    def __init__(self, window):
        super().__init__()
        self.window = window

    def forward(self, x, train=False):
        B, C, L = x.shape
        if L < 1:
            raise ShapeError("max pooling over an empty signal")
        n = L // self.window
        if n == 0:
            raise ShapeError(f"length {L} shorter than pooling window {self.window}")
        xv = x[:, :, :n * self.window].reshape(B, C, n, self.window)
        arg = xv.argmax(axis=3)
        self._cache = (arg, x.shape)
        return np.take_along_axis(xv, arg[..., None], axis=3)[..., 0]

    def backward(self, grad):
        arg, (B, C, L) = self._take_cache()
        n = arg.shape[2]
        dxv = np.zeros((B, C, n, self.window), dtype=grad.dtype)
        np.put_along_axis(dxv, arg[..., None], grad[..., None], axis=3)
        dx = np.zeros((B, C, L), dtype=grad.dtype)
        dx[:, :, :n * self.window] = dxv.reshape(B, C, -1)
        return dx


class AdaptiveMaxPool1d(Layer):
    """Global max over the length axis -> ``(B, C, 1)``."""

    def forward(self, x, train=False):
        if x.shape[2] < 1:
            raise ShapeError("max pooling over an empty signal")
        arg = x.argmax(axis=2)
        self._cache = (arg, x.shape)
        return np.take_along_axis(x, arg[..., None], axis=2)

    def backward(self, grad):
        arg, shape = self._take_cache()
        dx = np.zeros(shape, dtype=grad.dtype)
        np.put_along_axis(dx, arg[..., None], grad, axis=2)
        return dx


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / n_in)
        self.params = {"weight": (rng.standard_normal((n_out, n_in)) * std).astype(dtype),
                       "bias": np.zeros(n_out, dtype=dtype)}

    def forward(self, x, train=False):
        W, b = self.params["weight"], self.params["bias"]
        if x.ndim != 2 or x.shape[1] != W.shape[1]:
            raise ShapeError(f"dense: input {x.shape} incompatible with weight {W.shape}")
        self._cache = x
        return x @ W.T + b

    def backward(self, grad):
        x = self._take_cache()
        self.grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.params["weight"]


class ReLU(Layer):
    def forward(self, x, train=False):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return grad * self._take_cache()


class Tanh(Layer):
    def forward(self, x, train=False):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, grad):
        y = self._take_cache()
        return grad * (1 - y * y)


class BatchNorm1d(Layer):
    """Per-channel batch normalization over batch (and length) axes.

    Running variance is updated with the unbiased batch variance.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(channels, dtype=dtype),
                       "beta": np.zeros(channels, dtype=dtype)}
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _axes(self, x):
        return (0, 2) if x.ndim == 3 else (0,)

    def _bcast(self, v, x):
        return v[None, :, None] if x.ndim == 3 else v[None, :]

    def forward(self, x, train=False):
        axes = self._axes(x)
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train:
            if x.shape[0] < 2:
                raise ShapeError("batch normalization in training mode needs a batch of at least 2")
            n = x.size // x.shape[1]
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            self.running_var[...] = (1 - m) * self.running_var + m * var * n / (n - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv_std, x)
        self._cache = (xhat, inv_std, train, axes)
        return xhat * self._bcast(gamma, x) + self._bcast(beta, x)

    def backward(self, grad):
        xhat, inv_std, train, axes = self._take_cache()
        gamma = self.params["gamma"]
        self.grads = {"gamma": (grad * xhat).sum(axis=axes), "beta": grad.sum(axis=axes)}
        dxhat = grad * self._bcast(gamma, grad)
        if not train:
            return dxhat * self._bcast(inv_std, grad)
        n = grad.size // grad.shape[1]
        s1 = self._bcast(dxhat.sum(axis=axes), grad)
        s2 = self._bcast((dxhat * xhat).sum(axis=axes), grad)
        return self._bcast(inv_std, grad) / n * (n * dxhat - s1 - xhat * s2)
