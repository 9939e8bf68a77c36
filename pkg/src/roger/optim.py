"""Minimal Adam used by the map and pose optimizers."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, shape, lr, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = np.broadcast_to(np.asarray(lr, dtype=np.float64), shape).copy()
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        """Return the parameter update (to be added) for this gradient."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return -self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def extend(self, n_new: int):
        """Grow first-dimension state for newly inserted parameters."""
        pad = (n_new,) + self.m.shape[1:]
        self.m = np.concatenate([self.m, np.zeros(pad)])
        self.v = np.concatenate([self.v, np.zeros(pad)])
        self.lr = np.concatenate([self.lr, np.broadcast_to(self.lr[:1], pad).copy()])

    def select(self, keep: np.ndarray):
        self.m = self.m[keep]
        self.v = self.v[keep]
        self.lr = self.lr[keep]
