"""Minimal in-place optimizers over lists of parameter arrays.

Hand-rolled on purpose: the training loop needs to snapshot and bit-exactly
restore parameters around KL rollbacks and to retune the learning rate
mid-run, which is simplest with plain arrays.
"""

from __future__ import annotations

import numpy as np


class SGDMomentum:
    """Classic momentum: v = m*v + g; p -= lr * v."""

    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v += g.astype(p.dtype, copy=False)
            p -= np.asarray(self.lr, dtype=p.dtype) * v

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {"lr": np.array([self.lr])}
        if self.velocity is not None:
            for i, v in enumerate(self.velocity):
                state[f"v{i}"] = v.copy()
        return state

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        self.lr = float(state["lr"][0])
        vel = [state[k] for k in sorted((k for k in state if k.startswith("v")),
                                        key=lambda k: int(k[1:]))]
        self.velocity = [np.asarray(v).copy() for v in vel] or None


class Adam:
    """Adam with bias correction; defaults (0.9, 0.999, 1e-8)."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {"lr": np.array([self.lr]), "t": np.array([self.t])}
        if self.m is not None:
            for i, (m, v) in enumerate(zip(self.m, self.v)):
                state[f"m{i}"] = m.copy()
                state[f"v{i}"] = v.copy()
        return state

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        self.lr = float(state["lr"][0])
        self.t = int(state["t"][0])
        ms = sorted((k for k in state if k.startswith("m")), key=lambda k: int(k[1:]))
        vs = sorted((k for k in state if k.startswith("v")), key=lambda k: int(k[1:]))
        self.m = [np.asarray(state[k]).copy() for k in ms] or None
        self.v = [np.asarray(state[k]).copy() for k in vs] or None
