"""Ground-truth gradient machinery, independent of the relaxation trainer.

Three routes that must agree with each other (and against which the
contrastive estimator is checked): a hand-written feed-forward MLP with
exact reverse-mode gradients (also the backprop baseline policy/value net),
backprop-through-time over the truncated relaxation unroll, and central
finite differences.  Everything here runs in float64 regardless of what the
trained nets use: oracle precision has to exceed the tolerances it enforces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .eqprop import LayeredEnergyNet, hard_sigmoid, hard_sigmoid_grad
from .errors import NumericalFailure


# ---------------------------------------------------------------------------
# feed-forward MLP with exact backprop (the BP baseline network)
# ---------------------------------------------------------------------------

class MlpNet:
    """Plain MLP: tanh hidden layers, identity output.

    ``weights[l]`` is (sizes[l], sizes[l+1]); ``biases[l]`` belongs to layer
    l+1.  Kept deliberately parallel to ``LayeredEnergyNet`` so the two
    families share optimizer/checkpoint plumbing.
    """

    def __init__(self, sizes: Sequence[int], weights: list[np.ndarray],
                 biases: list[np.ndarray], dtype=np.float64, seed: int = 0):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = weights
        self.biases = biases
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def copy(self) -> "MlpNet":
        return MlpNet(self.sizes, [w.copy() for w in self.weights],
                      [b.copy() for b in self.biases], self.dtype, self.seed)

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = flat[i:i + w.size].reshape(w.shape)
            i += w.size
            b[...] = flat[i:i + b.size]
            i += b.size
        assert i == flat.size

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if l < last:
                h = np.tanh(h)
        return h[0] if squeeze else h


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, weight_gain: float = 0.5,
             dtype=np.float64, seed: int = 0) -> MlpNet:
    """Same uniform fan-scaled init as the energy nets, for comparability."""
    weights, biases = [], []
    for l in range(len(sizes) - 1):
        bound = weight_gain / np.sqrt(sizes[l])
        weights.append(rng.uniform(-bound, bound, size=(sizes[l], sizes[l + 1])).astype(dtype))
        biases.append(np.zeros(sizes[l + 1], dtype=dtype))
    return MlpNet(sizes, weights, biases, dtype, seed)


def mlp_forward_backward(net: MlpNet, x: np.ndarray, out_grad: np.ndarray
                         ) -> tuple[np.ndarray, tuple[list[np.ndarray], list[np.ndarray]]]:
    """Forward pass plus exact reverse-mode parameter gradients.

    ``out_grad`` is dL/d(output) per sample; returned gradients are summed
    over the batch (callers average by passing pre-scaled out_grad).
    """
    x = np.asarray(x, dtype=net.dtype)
    if x.ndim == 1:
        x = x[None, :]
        out_grad = np.asarray(out_grad, dtype=net.dtype)[None, :]
    out_grad = np.asarray(out_grad, dtype=net.dtype)
    if out_grad.shape[-1] != net.out_dim:
        raise ValueError(f"out_grad width {out_grad.shape[-1]} != output dim {net.out_dim}")

    last = len(net.weights) - 1
    acts = [x]  # post-activation per layer
    h = x
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if l < last:
            h = np.tanh(h)
        acts.append(h)

    d_weights = [np.zeros_like(w) for w in net.weights]
    d_biases = [np.zeros_like(b) for b in net.biases]
    g = out_grad
    for l in range(last, -1, -1):
        # g is dL/d(pre-activation of layer l+1); for tanh layers fold in 1-h^2
        if l < last:
            g = g * (1.0 - acts[l + 1] ** 2)
        d_weights[l] = acts[l].T @ g
        d_biases[l] = g.sum(axis=0)
        g = g @ net.weights[l].T
    return acts[-1], (d_weights, d_biases)


# ---------------------------------------------------------------------------
# storage accounting
# ---------------------------------------------------------------------------

@dataclass
class StorageLedger:
    """Counts activation scalars retained for a gradient computation."""

    method_tag: str
    steps: int = 0
    peak_stored_scalars: int = 0

    def record(self, n_scalars: int) -> None:
        self.peak_stored_scalars = max(self.peak_stored_scalars, int(n_scalars))

    def csv_row(self) -> str:
        return f"{self.method_tag},{self.steps},{self.peak_stored_scalars}"


def ep_storage_ledger(net: LayeredEnergyNet, batch_size: int) -> StorageLedger:
    """Contrastive estimation retains only the two nudged equilibria."""
    per_state = batch_size * sum(net.sizes[1:])
    ledger = StorageLedger(method_tag="EP")
    ledger.record(2 * per_state)
    return ledger


# ---------------------------------------------------------------------------
# BPTT through the truncated relaxation unroll
# ---------------------------------------------------------------------------

def bptt_equilibrium_grad(net: LayeredEnergyNet, x: np.ndarray,
                          loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
                          steps: int, eps: float = 1.0
                          ) -> tuple[list[np.ndarray], list[np.ndarray], StorageLedger]:
    """Differentiate the final-state loss of a `steps`-step free relaxation.

    Unrolls the same projected-Euler dynamics as ``eqprop.relax`` (fixed
    step count, no early exit, so the computation graph is well defined),
    stores every intermediate state, and runs a reverse sweep.  ``loss``
    maps the final output batch to ``(value, d value / d output)``.
    Returns batch-summed-through ``loss`` gradients (i.e. gradients of
    exactly the scalar ``loss`` returned) and the storage ledger.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    B = x.shape[0]
    L = net.n_layers - 1
    W = [w.astype(np.float64) for w in net.weights]
    bias = [b.astype(np.float64) for b in net.biases]

    # ----- forward unroll, storing every step's states -----
    trajectory = [[x] + [np.zeros((B, n)) for n in net.sizes[1:]]]
    for t in range(steps):
        prev = trajectory[-1]
        rho = [prev[0]] + [hard_sigmoid(prev[l]) for l in range(1, L)] + ([prev[L]] if L >= 1 else [])
        cur = [x]
        for l in range(1, L + 1):
            d = rho[l - 1] @ W[l - 1] + bias[l - 1]
            if l < L:
                d = d + rho[l + 1] @ W[l].T
                new = hard_sigmoid(prev[l] + eps * (-prev[l] + d))
            else:
                new = prev[l] + eps * (-prev[l] + d)
            if not np.all(np.isfinite(new)):
                raise NumericalFailure(f"overflow in BPTT unroll at step {t + 1}, layer {l}")
            cur.append(new)
        trajectory.append(cur)

    ledger = StorageLedger(method_tag="BPTT", steps=steps)
    ledger.record(len(trajectory) * B * sum(net.sizes[1:]))

    _, d_out = loss(trajectory[-1][L])

    # ----- reverse sweep -----
    d_weights = [np.zeros_like(w) for w in W]
    d_biases = [np.zeros_like(b) for b in bias]
    lam = [np.zeros((B, n)) for n in net.sizes]  # adjoints d loss / d state
    lam[L] = np.asarray(d_out, dtype=np.float64).reshape(B, net.sizes[L])

    for t in range(steps, 0, -1):
        prev = trajectory[t - 1]
        nxt = trajectory[t]
        new_lam = [np.zeros_like(l_) for l_ in lam]
        for l in range(1, L + 1):
            if l < L:
                # s_l^t = clip(u);  u = (1-eps) s_l^{t-1} + eps * drive
                u = prev[l] + eps * (-prev[l] + _recompute_drive(net, W, bias, prev, l, L))
                mu = lam[l] * hard_sigmoid_grad(u)
            else:
                mu = lam[l]
            new_lam[l] += (1.0 - eps) * mu
            nu = eps * mu  # gradient at the drive term
            rho_left = prev[l - 1] if (l - 1 == 0 or l - 1 == L) else hard_sigmoid(prev[l - 1])
            d_weights[l - 1] += rho_left.T @ nu
            d_biases[l - 1] += nu.sum(axis=0)
            if l - 1 >= 1:
                new_lam[l - 1] += (nu @ W[l - 1].T) * hard_sigmoid_grad(prev[l - 1])
            if l < L:
                rho_right_grad = np.ones_like(prev[l + 1]) if l + 1 == L else hard_sigmoid_grad(prev[l + 1])
                d_weights[l] += nu.T @ (prev[l + 1] if l + 1 == L else hard_sigmoid(prev[l + 1]))
                new_lam[l + 1] += (nu @ W[l]) * rho_right_grad
        lam = new_lam

    return d_weights, d_biases, ledger


def _recompute_drive(net: LayeredEnergyNet, W, bias, states, l: int, L: int) -> np.ndarray:
    rho_left = states[l - 1] if (l - 1 == 0) else hard_sigmoid(states[l - 1])
    d = rho_left @ W[l - 1] + bias[l - 1]
    if l < L:
        rho_right = states[l + 1] if (l + 1 == L) else hard_sigmoid(states[l + 1])
        d = d + rho_right @ W[l].T
    return d


# ---------------------------------------------------------------------------
# central finite differences
# ---------------------------------------------------------------------------

def finite_diff_grad(f: Callable[[np.ndarray], float], theta: np.ndarray,
                     h: float = 1e-4) -> np.ndarray:
    """Central differences (f(p+h) - f(p-h)) / 2h, one parameter at a time.

    ``f`` must be deterministic; ``theta`` is copied, never mutated.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    work = theta.copy()
    for i in range(theta.size):
        orig = work[i]
        work[i] = orig + h
        fp = f(work)
        work[i] = orig - h
        fm = f(work)
        work[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
