"""Small fully connected building blocks on top of the autodiff tape."""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Linear:
    """Dense layer y = x @ W + b.

    Hidden layers get Gaussian weights scaled by 1/sqrt(fan_in); passing
    zero_init=True starts the layer (and anything downstream of it) at
    exactly zero, which the coupling blocks use to open as the identity.
    """

    def __init__(self, rng, in_dim, out_dim, zero_init=False):
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            w = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, out_dim))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x):
        return ad.add_bias(ad.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


class Mlp:
    """Stack of Linear layers with a fixed activation between them."""

    def __init__(self, rng, in_dim, hidden, out_dim, activation="relu",
                 zero_init_last=False):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.layers = []
        prev = in_dim
        for width in hidden:
            self.layers.append(Linear(rng, prev, width))
            prev = width
        self.layers.append(Linear(rng, prev, out_dim, zero_init=zero_init_last))

    def __call__(self, x):
        act = _ACTIVATIONS[self.activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return self.layers[-1](x)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def cross_entropy(logits, label_index, n_classes):
    """Mean negative log-likelihood of integer labels under the logits."""
    onehot = np.zeros((label_index.shape[0], n_classes))
    onehot[np.arange(label_index.shape[0]), label_index] = 1.0
    log_probs = ad.log_softmax(logits)
    picked = ad.tsum(ad.mul(log_probs, Tensor(onehot)), axis=1)
    return ad.neg(ad.tmean(picked))


def zero_grads(params):
    for p in params:
        p.zero_grad()


def all_finite(params):
    return all(np.all(np.isfinite(p.values)) for p in params)


class Sgd:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = float(lr)

    def zero_grad(self):
        zero_grads(self.params)

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.values -= self.lr * p.grad


class Adam:
    """Adam with the usual bias correction. State is per-parameter numpy."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        zero_grads(self.params)

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1 ** self.t)
            v_hat = self.v[i] / (1.0 - b2 ** self.t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
