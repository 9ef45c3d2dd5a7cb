"""End-to-end acceptance suite.

One test per externally checkable claim, each printing a single PASS line
with the measured quantities (run with ``pytest -s`` or read captured
output).  The gradient, advantage, gating, and kinematics checks run in
seconds to minutes; the training-based checks run the desk-scale profile
and take several minutes each.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from scipy.stats import kendalltau

from eqppo.cpg import (DT_LOW, LegGeometry, OscillatorBank, TrajectoryParams,
                       foot_target, hopf_step, leg_fk, leg_ik)
from eqppo.envsim import H_MAX_GRID, V_TARGET_GRID, ScriptedGaitPolicy, required_distance
from eqppo.eqprop import init_layered_net, relax
from eqppo.harness.ablation import run_axis
from eqppo.harness.config import TrainerConfig
from eqppo.harness.diagnostics import grad_check, ratio_probe
from eqppo.harness.evaluate import walking_grid
from eqppo.harness.trainer import Trainer
from eqppo.nudging import ClipConfig, gaussian_log_prob, log_nudging_ratio, policy_nudge_force
from eqppo.rollout import gae


# ---------------------------------------------------------------------------
# 1 + 2: equilibrium gradients against two independent oracles
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def gradient_rows():
    """One shared sweep: 20 random nets, contrastive vs finite-difference vs
    unrolled-backward gradients of the same relaxed quadratic loss."""
    t0 = time.time()
    rows = grad_check(n_nets=20, max_sizes=(8, 16, 16, 4), beta=0.1, seed=0,
                      with_bptt=True)
    return rows, time.time() - t0


def test_contrastive_gradients_match_finite_differences(gradient_rows):
    rows, elapsed = gradient_rows
    worst_cos = min(r["cosine"] for r in rows)
    worst_rel = max(r["rel_l2"] for r in rows)
    assert len(rows) >= 20
    assert worst_cos > 0.99
    assert worst_rel < 0.05
    assert elapsed < 60.0
    print(f"\nPASS gradient-fidelity: 20 nets, cos>={worst_cos:.5f}, "
          f"rel_l2<={worst_rel:.4f}, {elapsed:.1f}s")


def test_contrastive_gradients_match_unrolled_backward(gradient_rows):
    rows, elapsed = gradient_rows
    worst_cos = min(r["cosine_bptt"] for r in rows)
    min_ratio = min(r["storage_ratio"] for r in rows)
    assert worst_cos > 0.98
    assert min_ratio >= 4.0
    assert elapsed < 60.0
    print(f"\nPASS gradient-cross-oracle: cos>={worst_cos:.5f}, "
          f"storage ratio>={min_ratio:.1f} at 30 unroll steps, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3: recursive advantage estimation against the literal double sum
# ---------------------------------------------------------------------------

def test_advantage_recursion_matches_double_sum():
    rng = np.random.default_rng(0)
    gamma, lam = 0.99, 0.95
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 13))
        rewards = rng.normal(size=T)
        values = rng.normal(size=T)
        next_values = rng.normal(size=T)
        dones = (rng.random(T) < 0.25).astype(np.float64)
        falls = dones * (rng.random(T) < 0.5)

        adv, ret = gae(rewards, values, next_values, dones, falls, gamma, lam)

        delta = rewards + gamma * next_values * (1.0 - falls) - values
        brute = np.zeros(T)
        for t in range(T):
            factor = 1.0
            for k in range(t, T):
                brute[t] += factor * delta[k]
                factor *= gamma * lam * (1.0 - dones[k])
                if factor == 0.0:
                    break
        worst = max(worst, float(np.abs(adv - brute).max()),
                    float(np.abs(ret - (brute + values)).max()))
    assert worst < 1e-10
    print(f"\nPASS advantage-oracle: 1000 episodes, max |recursive - double sum| "
          f"= {worst:.2e}")


# ---------------------------------------------------------------------------
# 4: two-sided gate mechanics, cold and under nudge stress
# ---------------------------------------------------------------------------

def test_gate_zeroes_force_outside_trust_windows():
    rng = np.random.default_rng(1)
    n, d = 10_000, 3
    xi = rng.normal(size=(n, d))
    action = xi + rng.normal(size=(n, d))
    log_sigma = rng.uniform(-0.5, 0.5, size=d)
    log_prob_old = gaussian_log_prob(xi, log_sigma, action) + rng.uniform(-3, 3, size=n)
    adv = 4.0 * rng.normal(size=n)
    cfg = ClipConfig(epsilon=0.2, epsilon_rev=0.7, beta_ep=0.1)

    r = np.exp(log_nudging_ratio(xi, action, log_sigma, log_prob_old))
    force = policy_nudge_force(xi, action, adv, log_sigma, log_prob_old, cfg)

    outside = ((adv > 0) & ((r <= 0.3) | (r >= 1.2))
               | (adv < 0) & ((r <= 0.8) | (r >= 1.7)))
    inside = ((adv > 0) & (r > 0.3) & (r < 1.2)
              | (adv < 0) & (r > 0.8) & (r < 1.7))
    assert outside.sum() > 1000 and inside.sum() > 1000   # both regimes hit
    assert np.all(force[outside] == 0.0)
    assert np.all(np.abs(force[inside]).sum(axis=1) > 0.0)
    print(f"\nPASS gate-windows: force identically zero on {outside.sum()} "
          f"outside-window states, nonzero on {inside.sum()} inside")


def test_open_reverse_gate_lets_ratios_run_away():
    """Track log10 of the policy ratio while output units are nudged.

    Large advantages put the ungated dynamics in the runaway regime; the
    closed reverse gate must stop excursions at its window edge (plus the
    single step taken while crossing), the open gate must let them dive.
    """
    t0 = time.time()
    rng = np.random.default_rng(np.random.SeedSequence([4, 3]))
    net = init_layered_net([16, 32, 32, 4], rng, seed=3)
    n = 4096
    log_sigma = np.zeros(4)
    obs = rng.normal(size=(n, 16))
    free = relax(net, obs, force=None, max_steps=200, eps=0.05, early_exit=True)
    z = np.clip(rng.normal(size=(n, 4)), -1.5, 1.5)
    action = free.out + np.exp(log_sigma) * z
    log_prob_rollout = gaussian_log_prob(free.out, log_sigma, action)
    adv = rng.uniform(10.0, 15.0, size=n) * rng.choice([-1.0, 1.0], size=n)
    adv[rng.random(n) < 0.1] = 0.0
    nonzero = adv != 0
    gate_edge = np.log10(0.3)

    lows = {}
    for eps_rev in (0.7, 1.0):
        cfg = ClipConfig(epsilon=0.2, epsilon_rev=eps_rev, beta_ep=0.1)
        res = ratio_probe(net, obs, action, adv, log_sigma, log_prob_rollout,
                          cfg, steps=(200, 80, 80), eps=0.05)
        lows[eps_rev] = res.log10_min
        still = np.abs(np.stack([res.log10_min[~nonzero], res.log10_max[~nonzero]]))
        assert still.max() <= 0.01   # zero advantage -> ratio pinned at 1

    closed = lows[0.7][nonzero]
    crossed = float((closed < gate_edge).mean())
    assert crossed >= 0.3            # the gate engages on many samples...
    assert closed.min() >= -1.0      # ...but bounds the overshoot

    open_ = lows[1.0][nonzero]
    dived = float((open_ < -1.0).mean())
    assert dived >= 0.3
    assert open_.min() <= -3.0
    elapsed = time.time() - t0
    assert elapsed < 300.0
    print(f"\nPASS gate-excursions: closed gate min log10 r = {closed.min():.2f} "
          f"(edge {gate_edge:.2f}), open gate {dived:.0%} below -1, "
          f"min {open_.min():.0f}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 5: oscillator, foot trajectory, and leg kinematics
# ---------------------------------------------------------------------------

def test_oscillator_trajectory_and_kinematics():
    # amplitude settles on the commanded setpoint within half a second
    worst = 0.0
    for mu in (1.0, 1.5, 2.0):
        bank = OscillatorBank.resting()
        bank.set_commands(np.full(4, mu), np.zeros(4), np.zeros(4))
        for _ in range(int(round(0.5 / DT_LOW))):
            hopf_step(bank, DT_LOW)
        worst = max(worst, float(np.abs(bank.r - mu).max()))
    assert worst < 1e-3

    # swing apex: z = -h + g_c at theta = pi/2
    params = TrajectoryParams(h=0.25, g_c=0.1)
    apex = foot_target(np.array(1.5), np.array(np.pi / 2), np.array(0.0), params)
    assert apex[2] == pytest.approx(-0.15, abs=1e-12)

    # forward-after-inverse kinematics round trip on reachable targets
    rng = np.random.default_rng(5)
    geom = LegGeometry()
    q = np.stack([rng.uniform(-0.8, 0.8, size=(1000, 4)),
                  rng.uniform(-1.0, 1.5, size=(1000, 4)),
                  rng.uniform(-2.2, -0.7, size=(1000, 4))], axis=-1)
    feet = leg_fk(q, geom)
    err = float(np.abs(leg_fk(leg_ik(feet, geom), geom) - feet).max())
    assert err < 1e-9
    print(f"\nPASS oscillator-kinematics: amplitude err {worst:.1e}, apex z "
          f"{apex[2]:.3f}, round-trip err {err:.1e} on 1000 targets")


# ---------------------------------------------------------------------------
# 6: desk-scale training parity between the two gradient estimators
# ---------------------------------------------------------------------------

def test_desk_training_trends_and_parity():
    t0 = time.time()
    finals = {"ep": [], "bp": []}
    trend = []
    for algo in ("ep", "bp"):
        for seed in (0, 1, 2):
            trainer = Trainer(TrainerConfig.desk(algo=algo, seed=seed))
            summary = trainer.train()
            finals[algo].append(summary["final_reward"])
            rewards = np.array([m["mean_reward"] for m in trainer.metrics])

            if algo == "ep":
                # monotone upward trend, Mann-Kendall style
                tau, p = kendalltau(np.arange(len(rewards)), rewards)
                trend.append((seed, tau, p))
                assert tau > 0 and p < 0.05

                # every oversized update must have been rolled back, and the
                # run must not end collapsed
                for m in trainer.metrics:
                    if m["kl"] > 0.04:
                        assert m["rolled_back"] == 1
                assert rewards[-10:].mean() >= 0.5 * rewards.max()

    ep_final = float(np.mean(finals["ep"]))
    bp_final = float(np.mean(finals["bp"]))
    assert ep_final >= 0.85 * bp_final
    elapsed = time.time() - t0
    assert elapsed < 1800.0
    trend_txt = " ".join(f"s{s}:tau={t:.2f},p={p:.1e}" for s, t, p in trend)
    print(f"\nPASS training-parity: ep={ep_final:.4f} bp={bp_final:.4f} "
          f"ratio={ep_final / bp_final:.3f}; {trend_txt}; {elapsed / 60:.1f} min")
