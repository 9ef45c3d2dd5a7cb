"""Actor-critic agents: the relaxation-trained pair and a backprop baseline.

Both agents expose the same surface to the trainer -- process / act /
policy_mu / value_of / minibatch updates / snapshot / restore / state
bundles -- so the loop, safeguard, and checkpoint code are agnostic to
which one is training.  They differ exactly where they should: the energy
nets relax to equilibrium and learn from contrastive nudges, the baseline
MLPs do forward/backward passes on the clipped-surrogate gradient, and the
baseline skips the cosine expansion (raw normalized observations).
"""

from __future__ import annotations

import numpy as np

from ..eqprop import init_layered_net, relax, three_phase
from ..errors import CheckpointError, ConfigError
from ..nudging import (LOG_2PIE, GaussianPolicyHead, PolicyNudge, ValueNudge,
                       log_nudging_ratio, logstd_update, two_sided_mask)
from ..optim import Adam, SGDMomentum
from ..oracles import MlpNet, init_mlp, mlp_forward_backward
from ..preprocess import ObservationPipeline
from .config import TrainerConfig


def default_entropy_target(action_dim: int) -> float:
    """Entropy of a unit-sigma diagonal Gaussian: 0.5 * D * ln(2 pi e)."""
    return 0.5 * action_dim * LOG_2PIE


def _prefixed(prefix: str, arrays: dict) -> dict:
    return {f"{prefix}{k}": v for k, v in arrays.items()}


def _unprefixed(prefix: str, state: dict) -> dict:
    return {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}


class _AgentBase:
    """State plumbing shared by both families."""

    def __init__(self, raw_dim: int, action_dim: int, config: TrainerConfig,
                 expand_dim: int | None):
        self.cfg = config
        self.raw_dim = raw_dim
        self.action_dim = action_dim
        self.pipeline = ObservationPipeline(raw_dim, expand_dim)
        self.head = GaussianPolicyHead(np.zeros(action_dim))
        self.log_sigma = self.head.log_sigma
        self.entropy_target = (config.entropy_target if config.entropy_target is not None
                               else default_entropy_target(action_dim))
        self.policy_opt = SGDMomentum(config.eta_policy_initial, config.momentum)
        self.value_opt = SGDMomentum(config.eta_value, config.momentum)
        self.logstd_opt = Adam(config.eta_logstd)

    # -- shared pieces ------------------------------------------------------

    def process(self, raw_obs: np.ndarray) -> np.ndarray:
        return self.pipeline.apply(raw_obs)

    def act(self, raw_obs: np.ndarray, rng: np.random.Generator
            ) -> tuple[np.ndarray, np.ndarray]:
        mu = self.policy_mu(self.process(raw_obs))
        return self.head.sample(mu, rng)

    def _logstd_step(self, action, advantage, log_prob_old, mu_free):
        grad = logstd_update(action, advantage, log_prob_old, mu_free,
                             self.log_sigma, self.cfg.epsilon, self.cfg.k_entropy,
                             self.entropy_target)
        self.logstd_opt.step([self.log_sigma], [grad.grad])

    def policy_snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        return self.policy_net.get_flat().copy(), self.log_sigma.copy()

    def policy_restore(self, snapshot: tuple[np.ndarray, np.ndarray]) -> None:
        flat, log_sigma = snapshot
        self.policy_net.set_flat(flat)
        self.log_sigma[...] = log_sigma

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {"log_sigma": self.log_sigma.copy()}
        state.update(_prefixed("pipe_", self.pipeline.state_arrays()))
        state.update(_prefixed("popt_", self.policy_opt.state_arrays()))
        state.update(_prefixed("vopt_", self.value_opt.state_arrays()))
        state.update(_prefixed("lopt_", self.logstd_opt.state_arrays()))
        return state

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        self.log_sigma[...] = state["log_sigma"]
        self.pipeline.load_state_arrays(_unprefixed("pipe_", state))
        self.policy_opt.load_state_arrays(_unprefixed("popt_", state))
        self.value_opt.load_state_arrays(_unprefixed("vopt_", state))
        self.logstd_opt.load_state_arrays(_unprefixed("lopt_", state))

    @property
    def policy_lr(self) -> float:
        return self.policy_opt.lr

    @policy_lr.setter
    def policy_lr(self, lr: float) -> None:
        self.policy_opt.lr = lr


class EPAgent(_AgentBase):
    """Energy-net pair trained by three-phase contrastive relaxation."""

    def __init__(self, raw_dim: int, action_dim: int, config: TrainerConfig,
                 rng: np.random.Generator):
        super().__init__(raw_dim, action_dim, config, config.idct_dim)
        in_dim = self.pipeline.out_dim
        self.policy_net = init_layered_net([in_dim, *config.hidden_sizes, action_dim],
                                           rng, weight_gain=config.alpha_w, seed=config.seed)
        self.value_net = init_layered_net([in_dim, *config.hidden_sizes, 1],
                                          rng, weight_gain=config.alpha_w, seed=config.seed)
        self.clip_cfg = config.clip_config()

    def policy_mu(self, processed: np.ndarray, max_steps: int | None = None,
                  return_result: bool = False):
        result = relax(self.policy_net, processed, force=None,
                       max_steps=max_steps or self.cfg.policy_steps[0],
                       eps=self.cfg.eps_ep, early_exit=self.cfg.relax_early_exit)
        return (result.out, result) if return_result else result.out

    def value_of(self, processed: np.ndarray) -> np.ndarray:
        result = relax(self.value_net, processed, force=None,
                       max_steps=self.cfg.value_steps[0], eps=self.cfg.eps_ep,
                       early_exit=self.cfg.relax_early_exit)
        return result.out[:, 0]

    def update_policy_minibatch(self, obs, action, advantage, log_prob_old) -> dict:
        nudge = PolicyNudge(action, advantage, self.log_sigma, log_prob_old,
                            self.clip_cfg)
        res = three_phase(self.policy_net, obs, nudge, *self.cfg.policy_steps,
                          eps=self.cfg.eps_ep, early_exit=self.cfg.relax_early_exit)
        params = self.policy_net.weights + self.policy_net.biases
        grads = res.d_weights + res.d_biases
        self.policy_opt.step(params, grads)
        self._logstd_step(action, advantage, log_prob_old, res.free.out)
        return {"free_steps": float(res.free.steps.mean()),
                "free_converged": float(res.free.converged.mean())}

    def update_value_minibatch(self, obs, return_target) -> dict:
        nudge = ValueNudge(return_target, self.cfg.beta_ep)
        res = three_phase(self.value_net, obs, nudge, *self.cfg.value_steps,
                          eps=self.cfg.eps_ep, early_exit=self.cfg.relax_early_exit)
        params = self.value_net.weights + self.value_net.biases
        grads = res.d_weights + res.d_biases
        self.value_opt.step(params, grads)
        return {"free_steps": float(res.free.steps.mean())}


class BPAgent(_AgentBase):
    """Backprop PPO baseline: tanh MLPs on raw normalized observations."""

    def __init__(self, raw_dim: int, action_dim: int, config: TrainerConfig,
                 rng: np.random.Generator):
        super().__init__(raw_dim, action_dim, config, expand_dim=None)
        in_dim = self.pipeline.out_dim
        self.policy_net = init_mlp([in_dim, *config.hidden_sizes, action_dim],
                                   rng, weight_gain=config.alpha_w, seed=config.seed)
        self.value_net = init_mlp([in_dim, *config.hidden_sizes, 1],
                                  rng, weight_gain=config.alpha_w, seed=config.seed)

    def policy_mu(self, processed: np.ndarray, max_steps: int | None = None,
                  return_result: bool = False):
        mu = self.policy_net.forward(processed)
        return (mu, None) if return_result else mu

    def value_of(self, processed: np.ndarray) -> np.ndarray:
        return self.value_net.forward(processed)[:, 0]

    def update_policy_minibatch(self, obs, action, advantage, log_prob_old) -> dict:
        mu = self.policy_net.forward(obs)
        log_r = log_nudging_ratio(mu, action, self.log_sigma, log_prob_old)
        mask = two_sided_mask(log_r, advantage, self.cfg.epsilon, self.cfg.epsilon_rev)
        r = np.exp(np.clip(log_r, -60.0, 60.0))
        var = np.exp(2.0 * self.log_sigma)
        # descent gradient of the negated clipped surrogate w.r.t. the mean
        coeff = -(mask * r * advantage / obs.shape[0])[:, None]
        out_grad = coeff * (action - mu) / var
        _, (d_w, d_b) = mlp_forward_backward(self.policy_net, obs, out_grad)
        self.policy_opt.step(self.policy_net.weights + self.policy_net.biases, d_w + d_b)
        self._logstd_step(action, advantage, log_prob_old, mu)
        return {"free_steps": 0.0, "free_converged": 1.0}

    def update_value_minibatch(self, obs, return_target) -> dict:
        v = self.value_net.forward(obs)
        out_grad = 2.0 * (v - np.asarray(return_target, dtype=np.float64)[:, None]) / obs.shape[0]
        _, (d_w, d_b) = mlp_forward_backward(self.value_net, obs, out_grad)
        self.value_opt.step(self.value_net.weights + self.value_net.biases, d_w + d_b)
        return {"free_steps": 0.0}


def make_agent(raw_dim: int, action_dim: int, config: TrainerConfig,
               rng: np.random.Generator):
    if config.algo == "ep":
        return EPAgent(raw_dim, action_dim, config, rng)
    if config.algo == "bp":
        return BPAgent(raw_dim, action_dim, config, rng)
    raise ConfigError(f"unknown algo {config.algo!r}")


def agent_from_bundle(bundle: dict):
    """Rebuild a frozen agent from a loaded checkpoint bundle."""
    config = TrainerConfig.from_yaml(bundle["config_yaml"])
    policy, value = bundle["policy"], bundle["value"]
    raw_dim = bundle["state"]["pipe_raw_mean"].shape[0]
    action_dim = policy.sizes[-1]
    agent = make_agent(raw_dim, action_dim, config, np.random.default_rng(0))
    if tuple(agent.policy_net.sizes) != tuple(policy.sizes):
        raise CheckpointError(
            f"bundle policy sizes {policy.sizes} do not match config {agent.policy_net.sizes}")
    for dst, src in zip((agent.policy_net, agent.value_net), (policy, value)):
        if isinstance(dst, MlpNet):
            # stored as the generic layered container; adopt the arrays
            src = MlpNet(src.sizes, src.weights, src.biases, src.dtype, src.seed)
        dst.weights[:] = [w.astype(dst.dtype) for w in src.weights]
        dst.biases[:] = [b.astype(dst.dtype) for b in src.biases]
    agent.load_state_arrays(bundle["state"])
    return agent, config
