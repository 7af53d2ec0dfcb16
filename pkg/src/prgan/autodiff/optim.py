"""ADAM with bias correction."""

from __future__ import annotations

import numpy as np


class Adam:
    """Holds first/second moments for a fixed list of parameter nodes.

    ``beta1`` defaults to 0.5 (the DCGAN setting); ``beta2`` and ``eps`` are
    the conventional defaults.
    """

    def __init__(self, params, lr: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, grads=None):
        """Apply one update using ``grads`` (defaults to each parameter's ``.grad``)."""
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        for p, g in zip(self.params, grads):
            if g is None or g.shape != p.value.shape:
                raise ValueError(
                    f"gradient shape {None if g is None else g.shape} != parameter shape {p.value.shape}"
                )
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.value -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.value.dtype)

    def state_dict(self, prefix: str) -> dict:
        out = {f"{prefix}/step": np.array([self.t], np.float32)}
        for i, p in enumerate(self.params):
            key = p.name or str(i)
            out[f"{prefix}/m/{key}"] = self.m[i]
            out[f"{prefix}/v/{key}"] = self.v[i]
        return out

    def load_state_dict(self, prefix: str, tensors: dict):
        self.t = int(tensors[f"{prefix}/step"][0])
        for i, p in enumerate(self.params):
            key = p.name or str(i)
            self.m[i] = tensors[f"{prefix}/m/{key}"].astype(np.float32).copy()
            self.v[i] = tensors[f"{prefix}/v/{key}"].astype(np.float32).copy()


def adam_step(params, grads, state: Adam):
    state.step(grads)
    return params
