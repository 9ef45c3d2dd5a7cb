"""Energy-based layered networks trained by contrastive nudged relaxation.

A network is a chain of layers coupled by symmetric weights.  Inference is
not a forward pass: the non-input layers relax to a fixed point of

    dxi/dt = -xi + rho'(xi) * (left drive + right drive + bias)

with the input layer clamped.  Hidden layers use a hard-sigmoid activation;
input and output layers are identity.  Gradients come from relaxing twice
more under an output nudge force of opposite signs (+beta / -beta) and
contrasting the two equilibria -- no computation graph is ever stored.

Discretization note: with the 0/1 subgradient of the hard sigmoid, a literal
forward-Euler step oscillates forever around boundary-pinned states (xi=0,
drive<0 maps 0 -> drive -> 0 -> ...).  We integrate the projected form
instead, clamping hidden states back into [0, 1] each step; its fixed points
are exactly the sliding equilibria of the continuous dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import NumericalFailure

DEFAULT_WEIGHT_GAIN = 0.5   # scale of the uniform init, per-layer bound gain/sqrt(fan_left)
DEFAULT_EPS = 1.0           # relaxation step size
DEFAULT_CONV_TOL = 1e-4     # per-sample max |delta xi| threshold
CONV_PATIENCE = 5           # consecutive small-change steps required


def hard_sigmoid(x: np.ndarray) -> np.ndarray:
    """Piecewise-linear sigmoid: clamp to [0, 1]."""
    return np.clip(x, 0.0, 1.0)


def hard_sigmoid_grad(x: np.ndarray) -> np.ndarray:
    """Subgradient of :func:`hard_sigmoid`; 1 on the closed interval [0, 1]."""
    return ((x >= 0.0) & (x <= 1.0)).astype(x.dtype)


class LayeredEnergyNet:
    """Symmetric-weight layered network state container.

    ``weights[l]`` has shape ``(sizes[l], sizes[l+1])`` and couples layers
    l and l+1 in both directions; ``biases[l]`` belongs to layer l+1 (the
    clamped input layer has no bias).  Parameters are stored row-major in
    ``dtype`` (float32 by default; oracles copy to float64).
    """

    def __init__(self, sizes: Sequence[int], weights: list[np.ndarray],
                 biases: list[np.ndarray], dtype=np.float32, seed: int = 0):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = weights
        self.biases = biases
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)
        for l, w in enumerate(weights):
            assert w.shape == (self.sizes[l], self.sizes[l + 1])
        assert len(biases) == len(weights)

    @property
    def n_layers(self) -> int:
        return len(self.sizes)

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def copy(self) -> "LayeredEnergyNet":
        return LayeredEnergyNet(self.sizes, [w.copy() for w in self.weights],
                                [b.copy() for b in self.biases], self.dtype, self.seed)

    def astype(self, dtype) -> "LayeredEnergyNet":
        return LayeredEnergyNet(self.sizes, [w.astype(dtype) for w in self.weights],
                                [b.astype(dtype) for b in self.biases], dtype, self.seed)

    # -- flat parameter vector (order: W0, b0, W1, b1, ...) -----------------

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


def init_layered_net(sizes: Sequence[int], rng: np.random.Generator,
                     weight_gain: float = DEFAULT_WEIGHT_GAIN,
                     dtype=np.float32, seed: int = 0) -> LayeredEnergyNet:
    """Uniform init: each weight ~ U(-g/sqrt(fan), +g/sqrt(fan)) with fan the
    size of the layer nearer the input; biases start at zero."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"need at least two positive layer sizes, got {sizes}")
    weights, biases = [], []
    for l in range(len(sizes) - 1):
        bound = weight_gain / np.sqrt(sizes[l])
        w = rng.uniform(-bound, bound, size=(sizes[l], sizes[l + 1]))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(sizes[l + 1], dtype=dtype))
    return LayeredEnergyNet(sizes, weights, biases, dtype, seed)


class NudgeForce(Protocol):
    """Output-layer force used during the two nudge phases.

    ``beta`` is the positive nudge strength; ``force``
    receives the current output states and a phase sign in {+1, -1} and
    returns the force array added to the output dynamics.  ``prepare`` is
    called once with the free-phase equilibrium outputs (used e.g. to freeze
    a static gating mask) before either nudge phase runs.
    """

    beta: float

    def prepare(self, free_out: np.ndarray) -> None: ...

    def force(self, out_states: np.ndarray, sign: float) -> np.ndarray: ...


@dataclass
class RelaxationResult:
    """Equilibrium states plus per-sample convergence bookkeeping.

    ``states[l]`` is the batch of layer-l states (the input layer is the
    clamped input itself).  ``steps[i]`` is the step at which sample i first
    held max |delta xi| < conv_tol for CONV_PATIENCE consecutive steps, or
    the number of steps run if it never converged.
    """

    states: list[np.ndarray]
    steps: np.ndarray
    converged: np.ndarray
    n_steps_run: int
    delta_history: np.ndarray  # (CONV_PATIENCE, B) ring of the last max |delta xi| values

    @property
    def out(self) -> np.ndarray:
        return self.states[-1]


def _drives(net: LayeredEnergyNet, states: list[np.ndarray]) -> list[np.ndarray]:
    """Total synaptic drive for every non-input layer, reading all states
    from the same step (simultaneous/Jacobi update)."""
    L = net.n_layers - 1
    rho = [states[0]]  # input layer: identity activation
    for l in range(1, L):
        rho.append(hard_sigmoid(states[l]))
    if L >= 1:
        rho.append(states[L])  # output layer: identity activation
    drives = []
    for l in range(1, L + 1):
        d = rho[l - 1] @ net.weights[l - 1] + net.biases[l - 1]
        if l < L:
            d = d + rho[l + 1] @ net.weights[l].T
        drives.append(d)
    return drives


def relax(net: LayeredEnergyNet, x: np.ndarray,
          force: Callable[[np.ndarray], np.ndarray] | None = None,
          max_steps: int = 100, eps: float = DEFAULT_EPS,
          conv_tol: float = DEFAULT_CONV_TOL, early_exit: bool = True,
          init_states: list[np.ndarray] | None = None,
          monitor: Callable[[int, list[np.ndarray]], None] | None = None) -> RelaxationResult:
    """Relax the non-input layers toward a fixed point.

    Hidden layers take projected Euler steps (clamped back into [0, 1]);
    the output layer takes plain Euler steps plus the nudge ``force``
    recomputed from the current outputs every step.  Non-input layers start
    at zero unless ``init_states`` (e.g. a free-phase equilibrium) is given.

    Convergence is tracked per sample as max |delta xi| over all non-input
    neurons staying below ``conv_tol`` for CONV_PATIENCE consecutive steps;
    converged samples stop updating when ``early_exit`` is set, otherwise
    they keep stepping (fixed-step mode) while ``steps`` still records when
    they first converged.
    """
    x = np.ascontiguousarray(x, dtype=net.dtype)
    if x.ndim == 1:
        x = x[None, :]
    B = x.shape[0]
    if x.shape[1] != net.sizes[0]:
        raise ValueError(f"input dim {x.shape[1]} != net input size {net.sizes[0]}")

    if init_states is not None:
        states = [x] + [s.astype(net.dtype).copy() for s in init_states[1:]]
    else:
        states = [x] + [np.zeros((B, n), dtype=net.dtype) for n in net.sizes[1:]]

    steps = np.full(B, max_steps, dtype=np.int64)
    streak = np.zeros(B, dtype=np.int64)
    converged = np.zeros(B, dtype=bool)
    active = np.ones(B, dtype=bool)
    history = np.full((CONV_PATIENCE, B), np.inf)
    L = net.n_layers - 1
    n_run = 0

    for step in range(1, max_steps + 1):
        drives = _drives(net, states)
        delta = np.zeros(B, dtype=np.float64)
        for l in range(1, L + 1):
            old = states[l]
            if l < L:
                new = hard_sigmoid(old + eps * (-old + drives[l - 1]))
            else:
                d = drives[l - 1]
                if force is not None:
                    d = d + force(old)
                new = old + eps * (-old + d)
            if not np.all(np.isfinite(new)):
                raise NumericalFailure(f"non-finite states in layer {l} at relaxation step {step}")
            delta = np.maximum(delta, np.abs(new - old).max(axis=1))
            if early_exit:
                states[l] = np.where(active[:, None], new, old)
            else:
                states[l] = new
        n_run = step
        history[(step - 1) % CONV_PATIENCE] = delta

        streak = np.where(delta < conv_tol, streak + 1, 0)
        newly = active & (streak >= CONV_PATIENCE)
        steps[newly] = step
        converged |= newly
        active &= ~newly
        if monitor is not None:
            monitor(step, states)
        if early_exit and not active.any():
            break

    return RelaxationResult(states, steps, converged, n_run, history)


def estimate_grads(net: LayeredEnergyNet, pos_states: list[np.ndarray],
                   neg_states: list[np.ndarray], beta: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Contrastive parameter gradients from the two nudged equilibria.

    Per Hebbian pair (i, j) across adjacent layers:

        dW_ij = ( rho(xi_i+) rho(xi_j+) - rho(xi_i-) rho(xi_j-) ) / (2 beta)

    and likewise for biases with a single rho factor, averaged over the
    batch.  The result is a descent direction for the effective loss whose
    output derivative the +beta nudge force encodes (plain SGD applies
    ``param -= lr * grad``).
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    L = net.n_layers - 1
    B = pos_states[0].shape[0]

    def rho_l(states, l):
        if l == 0 or l == L:
            return states[l]
        return hard_sigmoid(states[l])

    scale = np.asarray(1.0 / (2.0 * beta * B), dtype=net.dtype)
    d_weights, d_biases = [], []
    for l in range(L):
        rp_l, rp_r = rho_l(pos_states, l), rho_l(pos_states, l + 1)
        rn_l, rn_r = rho_l(neg_states, l), rho_l(neg_states, l + 1)
        d_weights.append((rp_l.T @ rp_r - rn_l.T @ rn_r) * scale)
        d_biases.append((rp_r - rn_r).sum(axis=0) * scale)
    return d_weights, d_biases


@dataclass
class ThreePhaseResult:
    free: RelaxationResult
    pos: RelaxationResult
    neg: RelaxationResult
    d_weights: list[np.ndarray] = field(default_factory=list)
    d_biases: list[np.ndarray] = field(default_factory=list)


def three_phase(net: LayeredEnergyNet, x: np.ndarray, nudge: NudgeForce,
                steps_free: int, steps_pos: int, steps_neg: int,
                eps: float = DEFAULT_EPS, conv_tol: float = DEFAULT_CONV_TOL,
                early_exit: bool = False,
                monitor_pos: Callable[[int, list[np.ndarray]], None] | None = None,
                monitor_neg: Callable[[int, list[np.ndarray]], None] | None = None) -> ThreePhaseResult:
    """Free phase from zeros, then +beta and -beta phases both re-initialized
    at the free equilibrium, then contrastive gradients.

    ``nudge.prepare`` sees the free-phase outputs before either nudge phase
    (used to freeze static gating masks and any per-batch caches).
    """
    free = relax(net, x, force=None, max_steps=steps_free, eps=eps,
                 conv_tol=conv_tol, early_exit=early_exit)
    nudge.prepare(free.out)
    init = [s.copy() for s in free.states]
    pos = relax(net, x, force=lambda out: nudge.force(out, +1.0),
                max_steps=steps_pos, eps=eps, conv_tol=conv_tol,
                early_exit=early_exit, init_states=init, monitor=monitor_pos)
    neg = relax(net, x, force=lambda out: nudge.force(out, -1.0),
                max_steps=steps_neg, eps=eps, conv_tol=conv_tol,
                early_exit=early_exit, init_states=[s.copy() for s in free.states],
                monitor=monitor_neg)
    d_w, d_b = estimate_grads(net, pos.states, neg.states, nudge.beta)
    return ThreePhaseResult(free, pos, neg, d_w, d_b)
