"""Relaxation dynamics and contrastive gradient estimation.

The independent oracles here are deliberately dumb: a damped fixed-point
iteration run to 1e-12 for equilibria, and central finite differences of
the relaxed-equilibrium loss for gradients.
"""

from __future__ import annotations

import numpy as np
import pytest

from eqppo.eqprop import (LayeredEnergyNet, RelaxationResult, estimate_grads, hard_sigmoid,
                          init_layered_net, relax, three_phase)
from eqppo.errors import NumericalFailure
from eqppo.oracles import finite_diff_grad


def oracle_fixed_point(net, x, tol=1e-12, max_steps=200_000, damping=0.5):
    """Independent free-phase equilibrium: damped Jacobi iteration in float64."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    W = [w.astype(np.float64) for w in net.weights]
    b = [v.astype(np.float64) for v in net.biases]
    L = net.n_layers - 1
    states = [x] + [np.zeros((x.shape[0], n)) for n in net.sizes[1:]]
    for _ in range(max_steps):
        rho = [states[0]] + [np.clip(states[l], 0, 1) for l in range(1, L)] + [states[L]]
        delta = 0.0
        new_states = [x]
        for l in range(1, L + 1):
            d = rho[l - 1] @ W[l - 1] + b[l - 1]
            if l < L:
                d = d + rho[l + 1] @ W[l].T
                new = np.clip(states[l] + damping * (d - states[l]), 0.0, 1.0)
            else:
                new = states[l] + damping * (d - states[l])
            delta = max(delta, np.abs(new - states[l]).max())
            new_states.append(new)
        states = new_states
        if delta < tol:
            break
    return states


class QuadraticNudge:
    """Regression nudge: L = 1/2 ||xi_out - y||^2 -> force sign*beta*(xi - y)."""

    def __init__(self, y, beta):
        self.y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        self.beta = beta

    def prepare(self, free_out):
        pass

    def force(self, out, sign):
        return sign * self.beta * (out - self.y)


def equilibrium_loss(net, x, y, steps=4000):
    """Free-phase relaxation then 1/2 sum ||xi_out - y||^2 / B (the quantity
    whose parameter gradient the three-phase protocol estimates)."""
    res = relax(net, x, force=None, max_steps=steps, conv_tol=1e-13)
    err = res.out - np.atleast_2d(y)
    return 0.5 * float((err ** 2).sum()) / err.shape[0]


def make_net(sizes, seed, dtype=np.float64):
    return init_layered_net(sizes, np.random.default_rng(seed), dtype=dtype, seed=seed)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def test_init_weight_bounds_and_zero_biases():
    net = make_net([1024, 8, 4], seed=3)
    bound0 = 0.5 / np.sqrt(1024)
    assert bound0 == pytest.approx(0.015625)
    assert np.all(np.abs(net.weights[0]) <= bound0)
    assert np.all(np.abs(net.weights[1]) <= 0.5 / np.sqrt(8))
    assert all(np.all(b == 0) for b in net.biases)


def test_init_zero_gain_and_determinism():
    rng = np.random.default_rng(0)
    net = init_layered_net([4, 3, 2], rng, weight_gain=0.0)
    assert all(np.all(w == 0) for w in net.weights)
    n1 = make_net([5, 7, 2], seed=11)
    n2 = make_net([5, 7, 2], seed=11)
    assert all(np.array_equal(a, b) for a, b in zip(n1.weights, n2.weights))


def test_init_rejects_bad_sizes():
    with pytest.raises(ValueError):
        init_layered_net([4], np.random.default_rng(0))
    with pytest.raises(ValueError):
        init_layered_net([4, 0, 2], np.random.default_rng(0))


# ---------------------------------------------------------------------------
# relaxation
# ---------------------------------------------------------------------------

def test_single_neuron_equilibrium_is_bias():
    # zero weights: output layer relaxes to its bias
    net = LayeredEnergyNet([2, 1], [np.zeros((2, 1))], [np.array([0.7])], dtype=np.float64)
    res = relax(net, np.zeros((1, 2)), max_steps=200)
    assert res.out[0, 0] == pytest.approx(0.7, abs=1e-12)
    assert res.converged.all()


def test_zero_beta_nudge_matches_free_phase():
    net = make_net([3, 6, 2], seed=5)
    x = np.random.default_rng(1).normal(size=(4, 3))
    free = relax(net, x, max_steps=300)
    nudged = relax(net, x, force=lambda out: np.zeros_like(out), max_steps=300)
    for a, b in zip(free.states, nudged.states):
        assert np.array_equal(a, b)


def test_relax_matches_independent_fixed_point_oracle():
    net = make_net([2, 4, 1], seed=42)
    x = np.array([[0.3, -0.8], [1.1, 0.4]])
    res = relax(net, x, max_steps=5000, conv_tol=1e-13)
    oracle = oracle_fixed_point(net, x, tol=1e-12)
    for got, want in zip(res.states[1:], oracle[1:]):
        np.testing.assert_allclose(got, want, atol=1e-8)


def test_equilibrium_is_a_fixed_point_of_one_step():
    net = make_net([4, 8, 8, 2], seed=9)
    x = np.random.default_rng(2).normal(size=(5, 4))
    res = relax(net, x, max_steps=2000, conv_tol=1e-6)
    assert res.converged.all()
    again = relax(net, x, max_steps=1, init_states=res.states)
    for a, b in zip(again.states[1:], res.states[1:]):
        assert np.abs(a - b).max() < 1e-6


def test_hidden_states_stay_in_unit_interval():
    net = make_net([3, 10, 10, 2], seed=7)
    x = np.random.default_rng(3).normal(scale=3.0, size=(6, 3))
    seen = []
    relax(net, x, max_steps=60, monitor=lambda step, states: seen.append(
        max(float(s.max()) for s in states[1:-1]) if len(states) > 2 else 0.0))
    res = relax(net, x, max_steps=60)
    for s in res.states[1:-1]:
        assert s.min() >= 0.0 and s.max() <= 1.0
    assert max(seen) <= 1.0


def test_relax_reports_steps_and_respects_max_steps():
    net = make_net([2, 5, 1], seed=13)
    x = np.ones((3, 2))
    res = relax(net, x, max_steps=4, conv_tol=1e-15)
    assert res.n_steps_run == 4
    assert not res.converged.any()
    assert (res.steps == 4).all()


def test_relax_input_width_mismatch():
    net = make_net([3, 4, 1], seed=0)
    with pytest.raises(ValueError):
        relax(net, np.zeros((2, 5)), max_steps=10)


def test_relax_flags_nonfinite_states():
    net = make_net([2, 3, 1], seed=1)
    with pytest.raises(NumericalFailure) as err:
        relax(net, np.zeros((1, 2)), force=lambda out: np.full_like(out, np.nan), max_steps=5)
    assert "layer" in str(err.value)


def test_early_exit_freezes_converged_samples():
    net = make_net([2, 6, 1], seed=21)
    # one easy sample and one identical copy: both should converge and the
    # frozen states must equal a fixed-step run's states at the same tol
    x = np.array([[0.1, 0.2], [0.1, 0.2]])
    res_exit = relax(net, x, max_steps=500, early_exit=True)
    res_fixed = relax(net, x, max_steps=500, early_exit=False)
    assert res_exit.converged.all()
    assert res_exit.n_steps_run < 500
    np.testing.assert_allclose(res_exit.out, res_fixed.out, atol=1e-3)
    assert (res_exit.steps == res_fixed.steps).all()


# ---------------------------------------------------------------------------
# contrastive gradients
# ---------------------------------------------------------------------------

def test_estimate_grads_hand_example():
    # single weight between two one-neuron layers held at given activations
    net = LayeredEnergyNet([1, 1], [np.zeros((1, 1))], [np.zeros(1)], dtype=np.float64)
    pos = [np.array([[0.6]]), np.array([[0.5]])]
    neg = [np.array([[0.4]]), np.array([[0.5]])]
    d_w, d_b = estimate_grads(net, pos, neg, beta=0.1)
    assert d_w[0][0, 0] == pytest.approx((0.30 - 0.20) / 0.2)
    assert d_b[0][0] == pytest.approx(0.0, abs=1e-12)


def test_estimate_grads_symmetric_states_zero():
    net = make_net([3, 5, 2], seed=2)
    x = np.random.default_rng(0).normal(size=(4, 3))
    res = relax(net, x, max_steps=200)
    d_w, d_b = estimate_grads(net, res.states, [s.copy() for s in res.states], beta=0.1)
    assert all(np.all(g == 0) for g in d_w)
    assert all(np.all(g == 0) for g in d_b)


def test_estimate_grads_requires_positive_beta():
    net = make_net([2, 2], seed=0)
    s = [np.zeros((1, 2)), np.zeros((1, 2))]
    with pytest.raises(ValueError):
        estimate_grads(net, s, s, beta=0.0)


def ep_vs_fd(sizes, seed, beta, batch=3, steps=3000):
    """Cosine similarity and relative L2 error between three-phase gradients
    and finite differences of the relaxed-equilibrium loss."""
    rng = np.random.default_rng(seed)
    net = make_net(sizes, seed=seed)
    x = rng.normal(size=(batch, sizes[0]))
    y = rng.normal(size=(batch, sizes[-1]))

    tp = three_phase(net, x, QuadraticNudge(y, beta), steps_free=steps,
                     steps_pos=steps, steps_neg=steps, conv_tol=1e-12, early_exit=True)
    ep_flat = np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                              for w, b in zip(tp.d_weights, tp.d_biases)])

    probe = net.copy()

    def f(theta):
        probe.set_flat(theta)
        return equilibrium_loss(probe, x, y, steps=steps)

    fd_flat = finite_diff_grad(f, net.get_flat(), h=1e-4)
    cos = float(ep_flat @ fd_flat / (np.linalg.norm(ep_flat) * np.linalg.norm(fd_flat)))
    rel = float(np.linalg.norm(ep_flat - fd_flat) / np.linalg.norm(fd_flat))
    return cos, rel


def test_ep_gradients_match_finite_differences():
    cos, rel = ep_vs_fd([4, 8, 3], seed=17, beta=0.1)
    assert cos > 0.99
    assert rel < 0.05


def test_beta_shrink_quadratic_error_decay():
    # discrepancy vs the true gradient should fall ~4x when beta halves
    sizes, seed = [3, 6, 2], 23
    rng = np.random.default_rng(seed)
    net = make_net(sizes, seed=seed)
    x = rng.normal(scale=0.5, size=(2, sizes[0]))
    y = rng.normal(scale=0.5, size=(2, sizes[-1]))
    probe = net.copy()

    def f(theta):
        probe.set_flat(theta)
        return equilibrium_loss(probe, x, y)

    fd = finite_diff_grad(f, net.get_flat(), h=1e-5)

    errs = []
    for beta in (0.2, 0.1):
        tp = three_phase(net, x, QuadraticNudge(y, beta), 3000, 3000, 3000,
                         conv_tol=1e-13, early_exit=True)
        ep = np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                             for w, b in zip(tp.d_weights, tp.d_biases)])
        errs.append(np.linalg.norm(ep - fd))
    ratio = errs[0] / errs[1]
    assert 2.0 < ratio < 6.0  # 4 +- 50%


def test_three_phase_zero_force_returns_zero_grads():
    net = make_net([3, 5, 2], seed=4)
    x = np.random.default_rng(5).normal(size=(2, 3))

    class ZeroNudge:
        beta = 0.1
        def prepare(self, free_out): pass
        def force(self, out, sign): return np.zeros_like(out)

    tp = three_phase(net, x, ZeroNudge(), 200, 100, 100)
    assert all(np.allclose(g, 0, atol=1e-12) for g in tp.d_weights)
    np.testing.assert_allclose(tp.pos.out, tp.free.out)
    np.testing.assert_allclose(tp.neg.out, tp.free.out)


def test_three_phase_sgd_reduces_regression_error():
    rng = np.random.default_rng(8)
    net = make_net([2, 12, 1], seed=31, dtype=np.float32)
    x = rng.uniform(-1, 1, size=(16, 2))
    y = (0.5 * x[:, :1] - 0.3 * x[:, 1:]) + 0.2
    first = last = None
    lr = 0.05
    for step in range(200):
        tp = three_phase(net, x, QuadraticNudge(y, 0.1), 60, 30, 30)
        mse = float(((tp.free.out - y) ** 2).mean())
        if step == 0:
            first = mse
        last = mse
        for w, g in zip(net.weights, tp.d_weights):
            w -= (lr * g).astype(w.dtype)
        for b, g in zip(net.biases, tp.d_biases):
            b -= (lr * g).astype(b.dtype)
    assert last < first * 0.2


def test_gradients_bit_identical_across_runs():
    net = make_net([3, 7, 2], seed=77, dtype=np.float32)
    x = np.random.default_rng(6).normal(size=(4, 3)).astype(np.float32)
    y = np.random.default_rng(7).normal(size=(4, 2))
    runs = []
    for _ in range(2):
        tp = three_phase(net.copy(), x, QuadraticNudge(y, 0.1), 50, 25, 25)
        runs.append((tp.d_weights, tp.d_biases))
    for a, b in zip(runs[0][0], runs[1][0]):
        assert np.array_equal(a, b)
    for a, b in zip(runs[0][1], runs[1][1]):
        assert np.array_equal(a, b)


def test_float32_and_float64_gradients_agree():
    net64 = make_net([4, 8, 2], seed=99, dtype=np.float64)
    net32 = net64.astype(np.float32)
    rng = np.random.default_rng(10)
    x = rng.normal(size=(4, 4))
    y = rng.normal(size=(4, 2))
    g64 = three_phase(net64, x, QuadraticNudge(y, 0.1), 200, 100, 100)
    g32 = three_phase(net32, x.astype(np.float32), QuadraticNudge(y, 0.1), 200, 100, 100)
    a = np.concatenate([w.ravel() for w in g64.d_weights])
    b = np.concatenate([w.ravel() for w in g32.d_weights]).astype(np.float64)
    cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    assert cos > 0.999
