"""Dense layers and the Adam optimiser on top of :mod:`ivdfm.diffcore`."""
from __future__ import annotations

import numpy as np

from . import diffcore as dc


class MLP:
    """Fully connected ReLU network.

    Hidden layers optionally apply layer normalisation (before the ReLU) and
    dropout (after it). Dropout masks are drawn from the ``rng`` passed to
    :meth:`__call__`, so a fixed rng state gives a fixed graph.
    """

    def __init__(self, sizes, rng, layer_norm=False, dropout=0.0, name="mlp"):
        self.sizes = list(sizes)
        self.layer_norm = layer_norm
        self.dropout = float(dropout)
        self.name = name
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(dc.param(w, name=f"{name}.w{i}"))
            self.biases.append(dc.param(np.zeros(fan_out), name=f"{name}.b{i}"))

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def __call__(self, x, train=False, rng=None):
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = dc.affine(h, w, b)
            if i == last:
                break
            if self.layer_norm:
                h = dc.layer_norm(h)
            h = dc.relu(h)
            if train and self.dropout > 0:
                keep = 1.0 - self.dropout
                mask = (rng.random(h.shape) < keep) / keep
                h = dc.dropout(h, mask)
        return h


class Adam:
    """Adam with bias correction, updating parameter values in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = grads[p]
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.value -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
