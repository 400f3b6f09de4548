"""First-order optimizers used by the per-pair solvers."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam with bias correction, operating in place on a list of arrays."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def _second(self, g):
        return g * g

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * self._second(g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class VectorAdam(Adam):
    """Rotation-equivariant Adam: the second moment of each row (a 3-vector)
    is accumulated from its squared norm rather than per coordinate."""

    def _second(self, g):
        return np.broadcast_to(np.sum(g * g, axis=-1, keepdims=True), g.shape)
