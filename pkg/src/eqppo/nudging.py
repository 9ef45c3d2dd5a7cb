"""PPO-specific nudge forces, the nudging ratio, log-std and KL machinery.

The policy force implements a two-sided ratio gate: during a nudge phase the
output states drift, the per-step probability ratio r_nudging moves away
from 1, and the force switches off the moment r_nudging leaves the allowed
interval -- (1-eps_rev, 1+eps) for positive advantages, (1-eps, 1+eps_rev)
for negative ones.  The reverse bound eps_rev is what keeps the positive
feedback of the nudge dynamics from running away; the classic one-sided gate
(used by the static-mask ablation and the log-std update) has no lower bound
for positive advantages.

All probability arithmetic is done in log space.  Ratios are exponentiated
(clamped to [1e-30, 1e30]) only for reporting; gating always compares logs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError

LOG_RATIO_CLAMP = np.log(1e30)
LOG_2PI = np.log(2.0 * np.pi)
LOG_2PIE = np.log(2.0 * np.pi * np.e)


def gaussian_log_prob(mu: np.ndarray, log_sigma: np.ndarray, action: np.ndarray) -> np.ndarray:
    """log N(action; mu, diag(sigma^2)) summed over action dims: (B,)."""
    mu = np.atleast_2d(mu)
    action = np.atleast_2d(action)
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    z = (action - mu) / np.exp(log_sigma)
    return (-0.5 * LOG_2PI - log_sigma - 0.5 * z * z).sum(axis=-1)


@dataclass
class GaussianPolicyHead:
    """Standalone trainable per-dimension log standard deviations."""

    log_sigma: np.ndarray

    def __post_init__(self):
        self.log_sigma = np.asarray(self.log_sigma, dtype=np.float64)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def sample(self, mu: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
        noise = rng.standard_normal(mu.shape)
        action = mu + self.sigma * noise
        return action, gaussian_log_prob(mu, self.log_sigma, action)

    def entropy(self) -> float:
        """Closed-form diagonal-Gaussian entropy: sum_i (ln(2*pi*e) + 2 log sigma_i)/2."""
        return float(0.5 * (LOG_2PIE + 2.0 * self.log_sigma).sum())


def entropy_of(log_sigma: np.ndarray) -> float:
    return GaussianPolicyHead(log_sigma).entropy()


@dataclass
class ClipConfig:
    """Ratio-gate settings for the policy nudge force."""

    epsilon: float = 0.2
    epsilon_rev: float = 0.7
    sigma_scaling: str = "inv_sigma"      # or "inv_sigma_sq"
    mask_mode: str = "dynamic"            # or "static"
    beta_ep: float = 0.1

    def validate(self) -> "ClipConfig":
        if self.epsilon <= 0 or self.epsilon_rev <= 0:
            raise ConfigError(f"epsilon/epsilon_rev must be positive, got {self.epsilon}, {self.epsilon_rev}")
        if self.sigma_scaling not in ("inv_sigma", "inv_sigma_sq"):
            raise ConfigError(f"unknown sigma_scaling {self.sigma_scaling!r}")
        if self.mask_mode not in ("dynamic", "static"):
            raise ConfigError(f"unknown mask_mode {self.mask_mode!r}")
        if self.beta_ep <= 0:
            raise ConfigError(f"beta_ep must be positive, got {self.beta_ep}")
        return self

    @property
    def sigma_power(self) -> int:
        return 1 if self.sigma_scaling == "inv_sigma" else 2


def log_nudging_ratio(xi_out: np.ndarray, action: np.ndarray, log_sigma: np.ndarray,
                      log_prob_rollout: np.ndarray) -> np.ndarray:
    """log of the per-step ratio N(action; xi_out, sigma) / pi_rollout."""
    return gaussian_log_prob(xi_out, log_sigma, action) - np.asarray(log_prob_rollout, dtype=np.float64)


def nudging_ratio(xi_out: np.ndarray, action: np.ndarray, log_sigma: np.ndarray,
                  log_prob_rollout: np.ndarray) -> np.ndarray:
    """Ratio in linear space, clamped to [1e-30, 1e30] for safe reporting.

    Gating logic never uses this; it compares logs directly.
    """
    log_r = log_nudging_ratio(xi_out, action, log_sigma, log_prob_rollout)
    return np.exp(np.clip(log_r, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))


def _log_bound(x: float) -> float:
    return np.log(x) if x > 0 else -np.inf


def two_sided_mask(log_r: np.ndarray, advantage: np.ndarray, epsilon: float,
                   epsilon_rev: float) -> np.ndarray:
    """1.0 inside the advantage-dependent open ratio interval, else 0.0.

    A >= 0: r in (1 - eps_rev, 1 + eps); A < 0: r in (1 - eps, 1 + eps_rev).
    """
    pos = advantage >= 0
    lo = np.where(pos, _log_bound(1.0 - epsilon_rev), _log_bound(1.0 - epsilon))
    hi = np.where(pos, np.log(1.0 + epsilon), np.log(1.0 + epsilon_rev))
    return ((log_r > lo) & (log_r < hi)).astype(np.float64)


def one_sided_mask(log_r: np.ndarray, advantage: np.ndarray, epsilon: float) -> np.ndarray:
    """Classic clip gate: A >= 0 requires r < 1 + eps, A < 0 requires r > 1 - eps."""
    pos = advantage >= 0
    return np.where(pos, log_r < np.log(1.0 + epsilon),
                    log_r > _log_bound(1.0 - epsilon)).astype(np.float64)


def value_nudge_force(xi_out: np.ndarray, return_target: np.ndarray, beta: float,
                      batch_size: int = 1) -> np.ndarray:
    """Signed-beta force for the squared-error value objective.

    beta * d/dxi of (1/|B|) sum (xi - R)^2 = beta * 2 (xi - R) / |B|; a
    positive beta pushes the output away from the target (the nudge raises
    the loss; the contrastive estimate descends it).
    """
    xi = np.atleast_2d(np.asarray(xi_out, dtype=np.float64))
    target = np.asarray(return_target, dtype=np.float64).reshape(xi.shape)
    return beta * 2.0 * (xi - target) / batch_size


def policy_nudge_force(xi_out: np.ndarray, action: np.ndarray, advantage: np.ndarray,
                       log_sigma: np.ndarray, log_prob_rollout: np.ndarray,
                       cfg: ClipConfig, batch_size: int = 1, beta_sign: float = 1.0,
                       frozen_mask: np.ndarray | None = None) -> np.ndarray:
    """Gated policy force, recomputing the ratio from the CURRENT outputs.

    The ascent direction of the clipped surrogate w.r.t. the output is
    mask * (a - xi) / sigma^p * A / |B|; the positive-beta phase applies
    force = -beta * (that direction), so states drift away from the action
    when the advantage is positive and the contrastive parameter update
    (which descends) moves the policy mean toward it.

    ``frozen_mask`` (static mode) replaces the per-step gate with one
    computed at the free equilibrium; the force magnitude still follows the
    current states.
    """
    xi = np.atleast_2d(np.asarray(xi_out, dtype=np.float64))
    action = np.atleast_2d(np.asarray(action, dtype=np.float64))
    advantage = np.asarray(advantage, dtype=np.float64)
    sigma = np.exp(np.asarray(log_sigma, dtype=np.float64))

    if frozen_mask is not None:
        mask = np.asarray(frozen_mask, dtype=np.float64)
    else:
        log_r = log_nudging_ratio(xi, action, log_sigma, log_prob_rollout)
        mask = two_sided_mask(log_r, advantage, cfg.epsilon, cfg.epsilon_rev)

    grad = mask[:, None] * (action - xi) / sigma ** cfg.sigma_power * advantage[:, None] / batch_size
    return -beta_sign * cfg.beta_ep * grad


class PolicyNudge:
    """Adapter binding one minibatch to the three-phase protocol.

    Dynamic mode recomputes the gate every relaxation step; static mode
    freezes a one-sided gate at the free equilibrium during ``prepare``.
    """

    def __init__(self, action: np.ndarray, advantage: np.ndarray, log_sigma: np.ndarray,
                 log_prob_rollout: np.ndarray, cfg: ClipConfig, batch_size: int = 1):
        self.action = np.atleast_2d(np.asarray(action, dtype=np.float64))
        self.advantage = np.asarray(advantage, dtype=np.float64)
        self.log_sigma = np.asarray(log_sigma, dtype=np.float64)
        self.log_prob_rollout = np.asarray(log_prob_rollout, dtype=np.float64)
        self.cfg = cfg.validate()
        self.batch_size = batch_size
        self.beta = cfg.beta_ep
        self.frozen_mask: np.ndarray | None = None

    def prepare(self, free_out: np.ndarray) -> None:
        if self.cfg.mask_mode == "static":
            log_r = log_nudging_ratio(free_out, self.action, self.log_sigma, self.log_prob_rollout)
            self.frozen_mask = one_sided_mask(log_r, self.advantage, self.cfg.epsilon)
        else:
            self.frozen_mask = None

    def force(self, out_states: np.ndarray, sign: float) -> np.ndarray:
        return policy_nudge_force(out_states, self.action, self.advantage, self.log_sigma,
                                  self.log_prob_rollout, self.cfg, self.batch_size,
                                  beta_sign=sign, frozen_mask=self.frozen_mask)


class ValueNudge:
    """Adapter for the squared-error value objective."""

    def __init__(self, return_target: np.ndarray, beta: float, batch_size: int = 1):
        self.return_target = np.asarray(return_target, dtype=np.float64)
        self.beta = beta
        self.batch_size = batch_size

    def prepare(self, free_out: np.ndarray) -> None:
        pass

    def force(self, out_states: np.ndarray, sign: float) -> np.ndarray:
        return value_nudge_force(out_states, self.return_target, sign * self.beta, self.batch_size)


class LogStdGrad(NamedTuple):
    grad: np.ndarray          # descent direction handed to Adam
    clip_term: np.ndarray     # ascent gradient of the clipped surrogate
    entropy_term: np.ndarray  # gradient of k * (H - H_target)^2, uniform across dims


def logstd_update(action: np.ndarray, advantage: np.ndarray, log_prob_rollout: np.ndarray,
                  mu_free: np.ndarray, log_sigma: np.ndarray, epsilon: float,
                  k_entropy: float, entropy_target: float) -> LogStdGrad:
    """Explicit gradient on the log-std vector (the policy nets never carry it).

    Per dimension i the surrogate part averages
    mask * r * A * ((a_i - mu_i)^2 / sigma_i^2 - 1) over the batch, with the
    one-sided gate and the ratio r evaluated under the CURRENT sigma at the
    free-phase means.  The entropy part 2 k (H - H_target) is shared by all
    dimensions.  The returned ``grad`` is a descent direction: Adam steps
    ``log_sigma -= lr_adjusted(grad)`` to ascend the surrogate while pulling
    the entropy toward its target.
    """
    action = np.atleast_2d(np.asarray(action, dtype=np.float64))
    mu = np.atleast_2d(np.asarray(mu_free, dtype=np.float64))
    advantage = np.asarray(advantage, dtype=np.float64)
    log_sigma = np.asarray(log_sigma, dtype=np.float64)

    log_r = gaussian_log_prob(mu, log_sigma, action) - np.asarray(log_prob_rollout, dtype=np.float64)
    mask = one_sided_mask(log_r, advantage, epsilon)
    r = np.exp(np.clip(log_r, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))

    z2 = ((action - mu) / np.exp(log_sigma)) ** 2
    clip_term = (mask * r * advantage)[:, None] * (z2 - 1.0)
    clip_term = clip_term.mean(axis=0)

    H = entropy_of(log_sigma)
    entropy_term = np.full_like(log_sigma, 2.0 * k_entropy * (H - entropy_target))
    return LogStdGrad(-clip_term + entropy_term, clip_term, entropy_term)


def analytic_kl(mu_new: np.ndarray, mu_old: np.ndarray, log_sigma: np.ndarray) -> float:
    """Mean-shift KL estimate (sigma change ignored):

    (1 / 2|D|) sum_t sum_i (mu_new - mu_old)^2 / sigma_i^2
    """
    mu_new = np.atleast_2d(np.asarray(mu_new, dtype=np.float64))
    mu_old = np.atleast_2d(np.asarray(mu_old, dtype=np.float64))
    var = np.exp(2.0 * np.asarray(log_sigma, dtype=np.float64))
    return float(((mu_new - mu_old) ** 2 / var).sum() / (2.0 * mu_new.shape[0]))
