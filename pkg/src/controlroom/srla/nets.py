"""Small fully connected networks with hand-written backprop.

The recommender's networks are desk scale (two hidden layers of 64
units), so plain numpy in float64 keeps training deterministic under a
seed and lets the analytic gradients be checked directly against central
finite differences.
"""

from __future__ import annotations

import numpy as np


class MLP:
    """tanh hidden layers, linear output."""

    def __init__(self, sizes, rng, zero_last=False, w_scale=1.0):
        self.sizes = tuple(sizes)
        self.W = []
        self.b = []
        n_layers = len(sizes) - 1
        for i, (m, n) in enumerate(zip(sizes[:-1], sizes[1:])):
            if zero_last and i == n_layers - 1:
                w = np.zeros((m, n))
            else:
                w = rng.normal(0.0, w_scale / np.sqrt(m), size=(m, n))
            self.W.append(w)
            self.b.append(np.zeros(n))

    def forward(self, x):
        """Returns (output, cache); x is (batch, in_dim)."""
        h = np.asarray(x, dtype=float)
        cache = [h]
        last = len(self.W) - 1
        for i, (w, b) in enumerate(zip(self.W, self.b)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            cache.append(h)
        return h, cache

    def backward(self, cache, d_out):
        """Gradients of a scalar loss given d(loss)/d(output).

        Returns (grads, d_input) where grads matches params() layout.
        """
        gW = [None] * len(self.W)
        gb = [None] * len(self.b)
        d = np.asarray(d_out, dtype=float)
        last = len(self.W) - 1
        for i in range(last, -1, -1):
            h_in, h_out = cache[i], cache[i + 1]
            dz = d if i == last else d * (1.0 - h_out ** 2)
            gW[i] = h_in.T @ dz
            gb[i] = dz.sum(axis=0)
            d = dz @ self.W[i].T
        return gW + gb, d

    def params(self):
        return self.W + self.b

    def copy_from(self, other):
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src

    def soft_update_from(self, other, tau):
        for dst, src in zip(self.params(), other.params()):
            dst *= 1.0 - tau
            dst += tau * src


class SquashedActor:
    """MLP mapping states to actions squashed into [low, high].

    The final linear layer is zero-initialized, so a fresh actor outputs
    the midpoint of the action range everywhere.
    """

    def __init__(self, state_dim, action_low, action_high, hidden, rng):
        self.low = np.atleast_1d(np.asarray(action_low, dtype=float))
        self.high = np.atleast_1d(np.asarray(action_high, dtype=float))
        if np.any(self.low >= self.high):
            raise ValueError("action_low must be < action_high")
        self.center = 0.5 * (self.low + self.high)
        self.half = 0.5 * (self.high - self.low)
        self.net = MLP([state_dim, *hidden, self.low.size], rng, zero_last=True)

    def forward(self, states):
        z, cache = self.net.forward(states)
        t = np.tanh(z)
        return self.center + self.half * t, (cache, t, z)

    def backward(self, cache, d_action, d_logits=None):
        """Backprop d(loss)/d(action), plus an optional direct logit term."""
        net_cache, t, _z = cache
        dz = d_action * self.half * (1.0 - t ** 2)
        if d_logits is not None:
            dz = dz + d_logits
        grads, _ = self.net.backward(net_cache, dz)
        return grads

    def logits(self, cache):
        return cache[2]

    def params(self):
        return self.net.params()


class Critic:
    """Q(s, a) network; exposes the action gradient for policy ascent."""

    def __init__(self, state_dim, action_dim, hidden, rng):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.net = MLP([state_dim + action_dim, *hidden, 1], rng, w_scale=0.5)

    def forward(self, states, actions):
        x = np.concatenate([states, actions], axis=1)
        q, cache = self.net.forward(x)
        return q[:, 0], cache

    def backward(self, cache, d_q):
        grads, d_in = self.net.backward(cache, d_q[:, None])
        d_actions = d_in[:, self.state_dim:]
        return grads, d_actions

    def params(self):
        return self.net.params()


class Adam:
    """Adam on a list of parameter arrays, updated in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    """Plain gradient descent; used by the hand-checkable unit tests."""

    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


def make_optimizer(kind, params, lr):
    if kind == "adam":
        return Adam(params, lr)
    if kind == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def flatten_params(params):
    return np.concatenate([p.ravel() for p in params])


def set_flat_params(params, flat):
    offset = 0
    for p in params:
        n = p.size
        p[...] = flat[offset:offset + n].reshape(p.shape)
        offset += n
