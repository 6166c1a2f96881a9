"""A one-hidden-layer tanh MLP with hand-written backprop, plus optimizers."""

from __future__ import annotations

import numpy as np


class MLP:
    """``x -> W2 tanh(W1 x + b1) + b2`` with all weights in one flat vector.

    The named weights are views into ``params`` so optimizers can update the
    flat vector in place.
    """

    def __init__(self, n_in: int, n_hidden: int, n_out: int, params=None):
        self.n_in, self.n_hidden, self.n_out = int(n_in), int(n_hidden), int(n_out)
        size = self.n_hidden * self.n_in + self.n_hidden + self.n_out * self.n_hidden + self.n_out
        if params is None:
            params = np.zeros(size)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {params.shape}")
        self.params = params

    @classmethod
    def initialize(cls, n_in, n_hidden, n_out, rng, scale=0.1, zero_head=True):
        net = cls(n_in, n_hidden, n_out)
        h = net.n_hidden * net.n_in + net.n_hidden
        net.params[:h] = rng.uniform(-scale, scale, size=h)
        if not zero_head:
            net.params[h:] = rng.uniform(-scale, scale, size=net.params.size - h)
        return net

    @property
    def size(self) -> int:
        return self.params.size

    def _split(self, vec):
        H, D, V = self.n_hidden, self.n_in, self.n_out
        i = 0
        W1 = vec[i:i + H * D].reshape(H, D)
        i += H * D
        b1 = vec[i:i + H]
        i += H
        W2 = vec[i:i + V * H].reshape(V, H)
        i += V * H
        b2 = vec[i:i + V]
        return W1, b1, W2, b2

    @property
    def weights(self):
        return self._split(self.params)

    def copy(self) -> "MLP":
        return MLP(self.n_in, self.n_hidden, self.n_out, self.params.copy())

    def hidden(self, X):
        W1, b1, _, _ = self.weights
        return np.tanh(X @ W1.T + b1)

    def forward(self, X):
        """Return ``(outputs, hidden activations)`` for a batch ``X``."""
        h = self.hidden(X)
        _, _, W2, b2 = self.weights
        return h @ W2.T + b2, h

    def backward(self, X, h, d_out, grad):
        """Add ``d(sum d_out * outputs)/d params`` into ``grad``."""
        _, _, W2, _ = self.weights
        gW1, gb1, gW2, gb2 = self._split(grad)
        gW2 += d_out.T @ h
        gb2 += d_out.sum(axis=0)
        dz = (d_out @ W2) * (1.0 - h * h)
        gW1 += dz.T @ X
        gb1 += dz.sum(axis=0)
        return grad


class Adam:
    """Adaptive-moment descent with optional decoupled weight decay."""

    def __init__(self, size, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        if self.weight_decay:
            params -= self.lr * self.weight_decay * params
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, size, lr=1e-3, weight_decay=0.0):
        self.lr, self.weight_decay = lr, weight_decay

    def step(self, params, grad):
        if self.weight_decay:
            params -= self.lr * self.weight_decay * params
        params -= self.lr * grad


def make_optimizer(kind: str, size: int, lr: float, weight_decay: float = 0.0,
                   beta1: float = 0.9, beta2: float = 0.999):
    if kind == "adam":
        return Adam(size, lr=lr, beta1=beta1, beta2=beta2, weight_decay=weight_decay)
    if kind == "sgd":
        return SGD(size, lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")


def log_softmax(logits, axis=-1):
    shift = logits - logits.max(axis=axis, keepdims=True)
    return shift - np.log(np.exp(shift).sum(axis=axis, keepdims=True))


def logsumexp(a, axis=-1):
    """Max-shifted log-sum-exp that tolerates rows of all ``-inf``."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def log_sigmoid(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))
