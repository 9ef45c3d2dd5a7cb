"""PPO plumbing: GAE vs a brute-force oracle, nudge forces, ratio gating,
log-std/entropy updates, preprocessing, and the small optimizers."""

from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqppo.errors import ConfigError
from eqppo.nudging import (ClipConfig, GaussianPolicyHead, LOG_2PIE, PolicyNudge, ValueNudge,
                           analytic_kl, entropy_of, gaussian_log_prob, log_nudging_ratio,
                           logstd_update, nudging_ratio, one_sided_mask, policy_nudge_force,
                           two_sided_mask, value_nudge_force)
from eqppo.optim import Adam, SGDMomentum
from eqppo.preprocess import ObservationPipeline, RunningNormalizer, dct_coefficients, idct_expand
from eqppo.rollout import RolloutBuffer, gae, normalize_advantages


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------

def brute_force_gae(rewards, values, next_values, dones, falls, gamma, lam):
    """Literal double-loop evaluation of the exponentially weighted sum of
    TD errors, with episode cuts."""
    T = len(rewards)
    adv = np.zeros(T)
    for t in range(T):
        acc, w = 0.0, 1.0
        for k in range(t, T):
            delta = rewards[k] + gamma * next_values[k] * (1 - falls[k]) - values[k]
            acc += w * delta
            if dones[k]:
                break
            w *= gamma * lam
        adv[t] = acc
    return adv


def random_episode(rng, T):
    return dict(
        rewards=rng.normal(size=T),
        values=rng.normal(size=T),
        next_values=rng.normal(size=T),
        dones=rng.random(T) < 0.15,
        falls=np.zeros(T, dtype=bool),
    )


def test_gae_single_fall_step():
    adv, ret = gae(np.array([1.0]), np.array([0.0]), np.array([5.0]),
                   np.array([True]), np.array([True]), gamma=0.99, lam=0.95)
    assert adv[0] == pytest.approx(1.0)  # fall kills the bootstrap
    assert ret[0] == pytest.approx(1.0)


def test_gae_lambda_one_telescopes_to_discounted_return():
    rng = np.random.default_rng(4)
    T, gamma = 12, 0.97
    r = rng.normal(size=T)
    v = rng.normal(size=T)
    nv = np.concatenate([v[1:], [rng.normal()]])
    adv, _ = gae(r, v, nv, np.zeros(T, bool), np.zeros(T, bool), gamma, lam=1.0)
    for t in range(T):
        expect = sum(gamma ** (k - t) * r[k] for k in range(t, T)) \
            + gamma ** (T - t) * nv[-1] - v[t]
        assert adv[t] == pytest.approx(expect, abs=1e-10)


def test_gae_matches_brute_force_oracle():
    rng = np.random.default_rng(11)
    for case in range(1000):
        T = int(rng.integers(1, 12))
        ep = random_episode(rng, T)
        if case % 3 == 0:
            ep["falls"] = ep["dones"] & (rng.random(T) < 0.5)
        adv, ret = gae(**ep, gamma=0.99, lam=0.95)
        want = brute_force_gae(**ep, gamma=0.99, lam=0.95)
        np.testing.assert_allclose(adv, want, atol=1e-10)
        np.testing.assert_allclose(ret, want + ep["values"], atol=1e-10)


def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(5)
    ep = random_episode(rng, 20)
    adv, _ = gae(**ep, gamma=0.99, lam=0.0)
    delta = ep["rewards"] + 0.99 * ep["next_values"] * (1 - ep["falls"]) - ep["values"]
    np.testing.assert_allclose(adv, delta, atol=1e-12)


def test_gae_timeout_keeps_bootstrap_fall_kills_it():
    base = dict(rewards=np.array([0.0]), values=np.array([0.0]),
                next_values=np.array([2.0]), dones=np.array([True]))
    adv_timeout, _ = gae(**base, falls=np.array([False]), gamma=0.5, lam=0.95)
    adv_fall, _ = gae(**base, falls=np.array([True]), gamma=0.5, lam=0.95)
    assert adv_timeout[0] == pytest.approx(1.0)
    assert adv_fall[0] == pytest.approx(0.0)


def test_gae_empty_rejected():
    with pytest.raises(ValueError):
        gae(np.array([]), np.array([]), np.array([]), np.array([]), np.array([]), 0.99, 0.95)


def test_gae_vectorized_matches_per_env():
    rng = np.random.default_rng(6)
    T, N = 9, 4
    eps = [random_episode(rng, T) for _ in range(N)]
    stacked = {k: np.stack([e[k] for e in eps], axis=1) for k in eps[0]}
    adv_vec, _ = gae(**stacked, gamma=0.99, lam=0.95)
    for i, e in enumerate(eps):
        adv_i, _ = gae(**e, gamma=0.99, lam=0.95)
        np.testing.assert_allclose(adv_vec[:, i], adv_i, atol=1e-12)


def test_normalize_advantages():
    adv = np.random.default_rng(0).normal(3.0, 5.0, size=4096)
    out = normalize_advantages(adv)
    assert abs(out.mean()) < 1e-6
    assert 1 - 1e-4 < out.std() < 1 + 1e-4


def test_rollout_buffer_stacking_and_csv():
    buf = RolloutBuffer(n_envs=2)
    for t in range(3):
        buf.add(obs=np.ones((2, 4)) * t, action=np.zeros((2, 1)), reward=[0.1, 0.2],
                log_prob=[-1.0, -1.1], done=[False, t == 2], fall=[False, False],
                value=[0.5, 0.6], next_value=[0.4, 0.3])
    data = buf.stacked()
    assert data["obs"].shape == (3, 2, 4)
    assert buf.n_samples == 6
    sink = io.StringIO()
    rows = buf.dump_csv(sink)
    lines = sink.getvalue().strip().splitlines()
    assert rows == 6 and len(lines) == 7
    assert lines[0].startswith("env,t,reward")


# ---------------------------------------------------------------------------
# nudging ratio and masks
# ---------------------------------------------------------------------------

def test_ratio_is_one_at_rollout_mean():
    mu = np.array([[0.3, -0.2]])
    log_sigma = np.array([0.1, -0.3])
    a = np.array([[0.5, 0.1]])
    logp = gaussian_log_prob(mu, log_sigma, a)
    assert nudging_ratio(mu, a, log_sigma, logp)[0] == pytest.approx(1.0)


def test_ratio_hand_value():
    # D=1, sigma=1, action 0, rollout mean 0; xi moved to 1
    logp0 = gaussian_log_prob(np.array([[0.0]]), np.array([0.0]), np.array([[0.0]]))
    assert logp0[0] == pytest.approx(-0.9189385)
    r = nudging_ratio(np.array([[1.0]]), np.array([[0.0]]), np.array([0.0]), logp0)
    assert r[0] == pytest.approx(np.exp(-0.5), rel=1e-6)


def test_ratio_monotone_in_distance():
    logp0 = gaussian_log_prob(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)))
    rs = [nudging_ratio(np.array([[x]]), np.zeros((1, 1)), np.zeros(1), logp0)[0]
          for x in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(rs, rs[1:]))


def test_ratio_logging_clamp():
    logp0 = np.array([0.0])
    r = nudging_ratio(np.array([[500.0]]), np.zeros((1, 1)), np.zeros(1), logp0)
    assert r[0] == pytest.approx(1e-30)
    assert np.isfinite(r[0])


def test_two_sided_mask_intervals():
    eps, eps_rev = 0.2, 0.7
    log_r = np.log(np.array([1.0, 1.19, 1.21, 0.31, 0.29, 1.69, 1.71, 0.81, 0.79]))
    pos = two_sided_mask(log_r, np.ones(9), eps, eps_rev)
    np.testing.assert_array_equal(pos, [1, 1, 0, 1, 0, 0, 0, 1, 1])
    neg = two_sided_mask(log_r, -np.ones(9), eps, eps_rev)
    np.testing.assert_array_equal(neg, [1, 1, 1, 0, 0, 1, 0, 1, 0])


def test_one_sided_mask_intervals():
    log_r = np.log(np.array([0.5, 1.0, 1.3]))
    np.testing.assert_array_equal(one_sided_mask(log_r, np.ones(3), 0.2), [1, 1, 0])
    np.testing.assert_array_equal(one_sided_mask(log_r, -np.ones(3), 0.2), [0, 1, 1])


def test_mask_with_epsilon_rev_one_has_no_lower_bound():
    log_r = np.array([-500.0])
    assert two_sided_mask(log_r, np.ones(1), 0.2, 1.0)[0] == 1.0
    assert two_sided_mask(log_r, np.ones(1), 0.2, 0.7)[0] == 0.0


# ---------------------------------------------------------------------------
# nudge forces
# ---------------------------------------------------------------------------

def test_value_force_hand_value_and_zero_at_target():
    f = value_nudge_force(np.array([[1.0]]), np.array([0.0]), beta=0.1, batch_size=1)
    assert f[0, 0] == pytest.approx(0.2)  # positive: away from the target
    assert np.all(value_nudge_force(np.array([[0.7]]), np.array([0.7]), 0.1) == 0)


def test_value_force_batch_scaling():
    f1 = value_nudge_force(np.array([[1.0]]), np.array([0.0]), 0.1, batch_size=1)
    f4 = value_nudge_force(np.array([[1.0]]), np.array([0.0]), 0.1, batch_size=4)
    assert f4[0, 0] == pytest.approx(f1[0, 0] / 4)


def default_cfg(**kw):
    return ClipConfig(**kw).validate()


def test_policy_force_zero_advantage():
    cfg = default_cfg()
    f = policy_nudge_force(np.zeros((1, 2)), np.ones((1, 2)), np.array([0.0]),
                           np.zeros(2), np.array([-1.8]), cfg)
    assert np.all(f == 0)


def test_policy_force_active_inside_and_zero_outside_interval():
    cfg = default_cfg()
    a = np.array([[0.0]])
    log_sigma = np.zeros(1)
    logp0 = gaussian_log_prob(np.zeros((1, 1)), log_sigma, a)

    # close to the rollout mean, r ~ 0.995 in (0.3, 1.2): active
    f = policy_nudge_force(np.array([[0.1]]), a, np.array([1.0]), log_sigma, logp0, cfg)
    assert f[0, 0] != 0

    # xi drifted so far that r = exp(-0.5*2.5^2) ~ 0.044 < 0.3: force gated off
    f = policy_nudge_force(np.array([[2.5]]), a, np.array([1.0]), log_sigma, logp0, cfg)
    assert np.all(f == 0)

    # r = 1.5 for a positive advantage: outside (0.3, 1.2)
    log_r = np.log(1.5)
    xi = np.array([[0.0]])
    logp_shift = gaussian_log_prob(xi, log_sigma, a) - log_r
    f = policy_nudge_force(xi, a, np.array([1.0]), log_sigma, logp_shift, cfg)
    assert np.all(f == 0)


def test_policy_force_direction_and_sigma_scaling():
    a = np.array([[1.0]])
    log_sigma = np.log(np.array([0.5]))
    logp = gaussian_log_prob(np.zeros((1, 1)), log_sigma, a)  # rollout mean at 0 -> r=1
    adv = np.array([2.0])
    xi = np.zeros((1, 1))
    f1 = policy_nudge_force(xi, a, adv, log_sigma, logp, default_cfg(), beta_sign=1.0)
    # ascent direction is (a - xi) A / sigma; +beta applies its negative
    assert f1[0, 0] == pytest.approx(-0.1 * (1.0 - 0.0) * 2.0 / 0.5)
    f2 = policy_nudge_force(xi, a, adv, log_sigma, logp, default_cfg(sigma_scaling="inv_sigma_sq"))
    assert f2[0, 0] == pytest.approx(-0.1 * 2.0 / 0.25)
    f_neg = policy_nudge_force(xi, a, adv, log_sigma, logp, default_cfg(), beta_sign=-1.0)
    assert f_neg[0, 0] == pytest.approx(-f1[0, 0])


def test_force_gate_property_over_random_states():
    # 1e4 random states: force must be exactly zero outside the two-sided
    # interval and trail the gate sign inside
    rng = np.random.default_rng(42)
    n, d = 10_000, 3
    cfg = default_cfg()
    xi = rng.normal(scale=2.0, size=(n, d))
    a = rng.normal(scale=2.0, size=(n, d))
    adv = rng.normal(size=n)
    log_sigma = rng.uniform(-1.0, 0.5, size=d)
    logp = gaussian_log_prob(rng.normal(size=(n, d)), log_sigma, a)
    f = policy_nudge_force(xi, a, adv, log_sigma, logp, cfg)
    log_r = log_nudging_ratio(xi, a, log_sigma, logp)
    mask = two_sided_mask(log_r, adv, cfg.epsilon, cfg.epsilon_rev)
    gated_off = mask == 0
    assert np.all(f[gated_off] == 0)
    active = (mask == 1) & (adv != 0)
    assert np.all(np.any(f[active] != 0, axis=1) | np.all(xi[active] == a[active], axis=1))
    # the literal bounding statement: zero force whenever r <= 1 - eps_rev for A >= 0
    below = (adv >= 0) & (log_r <= np.log(1 - cfg.epsilon_rev))
    assert np.all(f[below] == 0)


def test_static_mask_frozen_across_steps():
    rng = np.random.default_rng(3)
    cfg = default_cfg(mask_mode="static")
    a = rng.normal(size=(8, 2))
    mu0 = rng.normal(size=(8, 2))
    log_sigma = np.zeros(2)
    logp = gaussian_log_prob(mu0, log_sigma, a)
    nudge = PolicyNudge(a, rng.normal(size=8), log_sigma, logp, cfg)
    nudge.prepare(mu0)
    frozen = nudge.frozen_mask.copy()
    # wildly different current states must not change the gate
    f_near = nudge.force(mu0, +1.0)
    f_far = nudge.force(mu0 + 50.0, +1.0)
    np.testing.assert_array_equal(nudge.frozen_mask, frozen)
    assert np.all((f_far != 0).any(axis=1) == (frozen == 1))
    assert np.all((f_near[frozen == 0] == 0))


def test_dynamic_mask_recomputed_from_current_states():
    cfg = default_cfg()
    a = np.zeros((1, 1))
    log_sigma = np.zeros(1)
    logp = gaussian_log_prob(np.zeros((1, 1)), log_sigma, a)
    nudge = PolicyNudge(a, np.array([1.0]), log_sigma, logp, cfg)
    nudge.prepare(np.zeros((1, 1)))
    assert nudge.frozen_mask is None
    assert nudge.force(np.zeros((1, 1)), +1.0)[0, 0] == 0.0  # xi == a: zero magnitude
    assert nudge.force(np.array([[1.0]]), +1.0)[0, 0] != 0.0
    assert nudge.force(np.array([[3.0]]), +1.0)[0, 0] == 0.0  # ratio collapsed, gate shut


# ---------------------------------------------------------------------------
# log-std update, entropy, KL
# ---------------------------------------------------------------------------

def test_entropy_closed_form():
    assert entropy_of(np.zeros(12)) == pytest.approx(6 * LOG_2PIE)
    assert entropy_of(np.zeros(12)) == pytest.approx(17.0273, abs=1e-3)
    head = GaussianPolicyHead(np.log(np.full(3, 2.0)))
    assert head.entropy() == pytest.approx(1.5 * LOG_2PIE + 3 * np.log(2.0))


def test_logstd_objective_part_zero_when_deviation_matches_sigma():
    # (a - mu)^2 == sigma^2 for every sample/dim -> bracket vanishes
    log_sigma = np.log(np.array([0.5, 2.0]))
    mu = np.zeros((6, 2))
    a = np.tile(np.exp(log_sigma), (6, 1)) * np.array([[1], [-1], [1], [-1], [1], [-1]])
    logp = gaussian_log_prob(mu, log_sigma, a)
    out = logstd_update(a, np.ones(6), logp, mu, log_sigma, epsilon=0.2,
                        k_entropy=0.01, entropy_target=5.0)
    np.testing.assert_allclose(out.clip_term, 0, atol=1e-12)


def test_logstd_entropy_term_uniform():
    log_sigma = np.zeros(12)
    out = logstd_update(np.zeros((2, 12)), np.zeros(2), np.zeros(2) - 11.0, np.zeros((2, 12)),
                        log_sigma, epsilon=0.2, k_entropy=0.01, entropy_target=17.03)
    H = entropy_of(log_sigma)
    expect = 2 * 0.01 * (H - 17.03)
    np.testing.assert_allclose(out.entropy_term, expect)
    assert len(set(out.entropy_term.round(15))) == 1


def test_logstd_descent_direction_grows_sigma_when_exploration_pays():
    # actions consistently farther than sigma with positive advantage:
    # ascent gradient positive -> descent step (-clip) raises log sigma
    rng = np.random.default_rng(0)
    log_sigma = np.zeros(1)
    mu = np.zeros((64, 1))
    a = rng.choice([-2.0, 2.0], size=(64, 1))
    logp = gaussian_log_prob(mu, log_sigma, a)
    out = logstd_update(a, np.ones(64), logp, mu, log_sigma, 0.2, 0.0, 0.0)
    assert out.clip_term[0] > 0
    assert out.grad[0] < 0  # Adam descends => log sigma increases


def test_analytic_kl_values():
    assert analytic_kl(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros(2)) == 0.0
    kl = analytic_kl(np.array([[0.2]]), np.array([[0.0]]), np.zeros(1))
    assert kl == pytest.approx(0.02)
    kl2 = analytic_kl(np.array([[0.2]]), np.array([[0.0]]), np.log(np.array([2.0])))
    assert kl2 == pytest.approx(0.005)


def test_policy_head_sampling_logprob_consistency():
    head = GaussianPolicyHead(np.log([0.3, 1.7]))
    mu = np.array([[0.5, -1.0]])
    a, logp = head.sample(mu, np.random.default_rng(0))
    assert logp[0] == pytest.approx(gaussian_log_prob(mu, head.log_sigma, a)[0])


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def test_idct_dc_coefficient_gives_constant():
    out = idct_expand(np.array([1.0, 0.0, 0.0]), 16)
    np.testing.assert_allclose(out, 1 / np.sqrt(16), atol=1e-12)


def test_idct_round_trip_and_energy():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(5, 7))
    out = idct_expand(x, 64)
    np.testing.assert_allclose(dct_coefficients(out, 7), x, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(out, axis=-1), np.linalg.norm(x, axis=-1), atol=1e-6)


@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=25, deadline=None)
def test_idct_linearity(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=6), rng.normal(size=6)
    lhs = idct_expand(alpha * x + beta * y, 32)
    rhs = alpha * idct_expand(x, 32) + beta * idct_expand(y, 32)
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_idct_rejects_shrinking():
    with pytest.raises(ConfigError):
        idct_expand(np.zeros(8), 4)


def test_running_normalizer_first_and_constant_stream():
    norm = RunningNormalizer(3)
    first = norm.normalize(np.array([5.0, -2.0, 0.5]))
    np.testing.assert_allclose(first, 0.0, atol=1e-12)
    for _ in range(20):
        out = norm.normalize(np.array([5.0, -2.0, 0.5]))
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_running_normalizer_statistics():
    rng = np.random.default_rng(12)
    norm = RunningNormalizer(4)
    for _ in range(100):
        norm.update(rng.normal(5.0, 2.0, size=(100, 4)))
    fresh = rng.normal(5.0, 2.0, size=(4000, 4))
    out = norm.apply(fresh)
    assert abs(out.mean()) < 0.05
    assert 0.9 < out.std() < 1.1


def test_running_normalizer_batch_merge_matches_sequential():
    rng = np.random.default_rng(7)
    data = rng.normal(size=(64, 3))
    a = RunningNormalizer(3)
    a.update(data)
    b = RunningNormalizer(3)
    for row in data:
        b.update(row)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(a.var, b.var, atol=1e-10)


def test_observation_pipeline_freeze_then_update():
    rng = np.random.default_rng(8)
    pipe = ObservationPipeline(raw_dim=4, expand_dim=16)
    batch = rng.normal(2.0, 3.0, size=(32, 4))
    before = pipe.apply(batch)
    pipe.update(batch)
    after = pipe.apply(batch)
    assert pipe.out_dim == 16
    assert before.shape == (32, 16)
    assert not np.allclose(before, after)  # statistics advanced
    # round-trip of the normalizer state arrays
    state = pipe.state_arrays()
    pipe2 = ObservationPipeline(4, 16)
    pipe2.load_state_arrays(state)
    np.testing.assert_array_equal(pipe.apply(batch), pipe2.apply(batch))


def test_observation_pipeline_raw_mode():
    pipe = ObservationPipeline(raw_dim=5, expand_dim=None)
    assert pipe.out_dim == 5
    x = np.ones((3, 5))
    assert pipe.apply(x).shape == (3, 5)
    with pytest.raises(ConfigError):
        ObservationPipeline(raw_dim=8, expand_dim=4)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

def test_sgd_momentum_accumulates():
    p = [np.array([1.0])]
    opt = SGDMomentum(lr=0.1, momentum=0.9)
    opt.step(p, [np.array([1.0])])
    assert p[0][0] == pytest.approx(0.9)
    opt.step(p, [np.array([1.0])])
    assert p[0][0] == pytest.approx(0.9 - 0.1 * 1.9)


def test_adam_first_step_size_is_lr():
    p = [np.array([0.0])]
    opt = Adam(lr=0.001)
    opt.step(p, [np.array([123.0])])
    assert p[0][0] == pytest.approx(-0.001, rel=1e-6)


def test_optimizer_state_round_trip():
    rng = np.random.default_rng(0)
    params = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    ref = [p.copy() for p in params]
    opt = SGDMomentum(0.05)
    opt.step(params, [np.ones_like(p) for p in params])
    state = opt.state_arrays()

    opt2 = SGDMomentum(0.5)
    opt2.load_state_arrays(state)
    assert opt2.lr == opt.lr
    mirror = [p.copy() for p in params]
    opt.step(params, [np.ones_like(p) for p in params])
    opt2.step(mirror, [np.ones_like(p) for p in mirror])
    for a, b in zip(params, mirror):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(params[0], ref[0])

    ad = Adam(0.01)
    ad.step(params, [np.ones_like(p) for p in params])
    ad2 = Adam(0.9)
    ad2.load_state_arrays(ad.state_arrays())
    assert ad2.t == 1 and ad2.lr == 0.01
