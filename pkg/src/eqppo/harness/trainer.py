"""Training loop with KL-guarded updates and rollback.

One iteration: collect a fixed-length rollout, advance the observation
normalizers once, compute GAE, then run shuffled minibatch epochs on the
policy (stopping early when the analytic KL estimate passes the stop
threshold) followed by the full set of value epochs.  The final KL estimate
drives the safeguard: far past the rollback bound the policy and log-std
are restored bit-exactly and the learning rate is cut by kappa^2; mildly
past the stop bound the rate is cut by kappa; well under target it grows
by kappa.  The rate is always clamped to its configured bounds.
"""

from __future__ import annotations

import csv
import dataclasses
import os

import numpy as np

from ..errors import ConfigError, NumericalFailure
from ..nudging import analytic_kl
from ..rollout import RolloutBuffer, gae, normalize_advantages
from ..envsim import OBS_DIM_CPG, OBS_DIM_RES, QuadrupedEnv, VelocityTrackEnv
from .agents import agent_from_bundle, make_agent
from .checkpoint import load_bundle, save_bundle
from .config import TrainerConfig

METRIC_FIELDS = ("update", "samples", "mean_reward", "kl", "policy_lr", "entropy",
                 "value_mse", "rolled_back", "policy_epochs", "free_steps",
                 "free_converged")


class VelocityAdapter:
    def __init__(self, config: TrainerConfig):
        self.env = VelocityTrackEnv(config.n_envs, seed=config.seed)
        self.raw_dim = self.env.obs_dim
        self.action_dim = self.env.action_dim

    def reset(self):
        return self.env.reset()

    def step(self, action):
        return self.env.step(action)


class QuadrupedStage1Adapter:
    def __init__(self, config: TrainerConfig):
        self.env = QuadrupedEnv(config.n_envs, stage=1, seed=config.seed,
                                h_max=config.h_max)
        self.raw_dim = OBS_DIM_CPG
        self.action_dim = self.env.action_dim

    def reset(self):
        return self.env.reset()[:, :OBS_DIM_CPG]

    def step(self, action):
        res = self.env.step(action)
        return dataclasses.replace(res, obs=res.obs[:, :OBS_DIM_CPG],
                                   terminal_obs=res.terminal_obs[:, :OBS_DIM_CPG])


class QuadrupedStage2Adapter:
    """Residual stage: a frozen stage-1 agent supplies the gait commands."""

    def __init__(self, config: TrainerConfig):
        if config.cpg_checkpoint is None:
            raise ConfigError("stage 2 requires --cpg-checkpoint")
        self.cpg_agent, _ = agent_from_bundle(load_bundle(config.cpg_checkpoint))
        self.env = QuadrupedEnv(config.n_envs, stage=2, seed=config.seed,
                                h_max=config.h_max)
        self.raw_dim = OBS_DIM_RES
        self.action_dim = self.env.action_dim
        self._obs = None

    def gait_command(self, obs):
        return self.cpg_agent.policy_mu(self.cpg_agent.process(obs[:, :OBS_DIM_CPG]))

    def reset(self):
        self._obs = self.env.reset()
        return self._obs

    def step(self, action):
        res = self.env.step(self.gait_command(self._obs), action)
        self._obs = res.obs
        return res


def build_env(config: TrainerConfig):
    if config.task == "velocity":
        return VelocityAdapter(config)
    if config.stage == 1:
        return QuadrupedStage1Adapter(config)
    return QuadrupedStage2Adapter(config)


class Trainer:
    def __init__(self, config: TrainerConfig, out_dir: str | None = None):
        config.validate()
        self.cfg = config
        self.out_dir = out_dir
        self.env = build_env(config)
        init_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
        self.agent = make_agent(self.env.raw_dim, self.env.action_dim, config, init_rng)
        self.action_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 101]))
        self.shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 202]))
        self.sample_count = 0
        self.update_count = 0
        self.metrics: list[dict] = []
        self._obs = self.env.reset()

    # ------------------------------------------------------------------
    # data collection
    # ------------------------------------------------------------------

    def rollout(self) -> RolloutBuffer:
        buf = RolloutBuffer(self.cfg.n_envs)
        obs = self._obs
        for _ in range(self.cfg.rollout_len):
            proc = self.agent.process(obs)
            mu = self.agent.policy_mu(proc)
            action, log_prob = self.agent.head.sample(mu, self.action_rng)
            value = self.agent.value_of(proc)
            res = self.env.step(action)
            next_value = self.agent.value_of(self.agent.process(res.terminal_obs))
            buf.add(obs, action, res.reward, log_prob, res.done, res.fall,
                    value, next_value)
            obs = res.obs
        self._obs = obs
        return buf

    # ------------------------------------------------------------------
    # one full update
    # ------------------------------------------------------------------

    def update(self, buf: RolloutBuffer) -> dict:
        cfg = self.cfg
        data = buf.stacked()
        adv, ret = gae(data["rewards"], data["values"], data["next_values"],
                       data["dones"], data["falls"], cfg.gamma, cfg.lam)

        n_total = buf.n_samples
        raw_obs = data["obs"].reshape(n_total, -1)
        actions = data["actions"].reshape(n_total, -1)
        log_probs = data["log_probs"].reshape(n_total)
        adv = adv.reshape(n_total)
        ret = ret.reshape(n_total)

        obs = self.agent.process(raw_obs)
        self.agent.pipeline.update(raw_obs)
        adv_n = normalize_advantages(adv)

        snapshot = self.agent.policy_snapshot()
        mu_old = self.agent.policy_mu(obs)

        kl = 0.0
        epochs_run = 0
        free_steps, free_conv, n_mb = 0.0, 0.0, 0
        for _ in range(cfg.k_epoch):
            perm = self.shuffle_rng.permutation(n_total)
            for mb in np.array_split(perm, cfg.n_minibatches):
                stats = self.agent.update_policy_minibatch(
                    obs[mb], actions[mb], adv_n[mb], log_probs[mb])
                free_steps += stats["free_steps"]
                free_conv += stats["free_converged"]
                n_mb += 1
            epochs_run += 1
            kl = analytic_kl(self.agent.policy_mu(obs), mu_old, self.agent.log_sigma)
            if kl > cfg.kl_stop_mult * cfg.kl_target:
                break

        for _ in range(cfg.k_epoch):
            perm = self.shuffle_rng.permutation(n_total)
            for mb in np.array_split(perm, cfg.n_minibatches):
                self.agent.update_value_minibatch(obs[mb], ret[mb])

        rolled_back = False
        if kl > cfg.kl_rollback_mult * cfg.kl_target:
            self.agent.policy_restore(snapshot)
            rolled_back = True
            self.agent.policy_lr /= cfg.kappa ** 2
        elif kl > cfg.kl_stop_mult * cfg.kl_target:
            self.agent.policy_lr /= cfg.kappa
        elif kl < cfg.kl_grow_mult * cfg.kl_target:
            self.agent.policy_lr *= cfg.kappa
        self.agent.policy_lr = float(np.clip(self.agent.policy_lr,
                                             cfg.eta_policy_lower, cfg.eta_policy_upper))

        value_mse = float(np.mean((self.agent.value_of(obs) - ret) ** 2))
        return {"update": self.update_count, "samples": self.sample_count,
                "mean_reward": float(data["rewards"].mean()), "kl": float(kl),
                "policy_lr": self.agent.policy_lr,
                "entropy": float(self.agent.head.entropy()),
                "value_mse": value_mse, "rolled_back": int(rolled_back),
                "policy_epochs": epochs_run,
                "free_steps": free_steps / max(n_mb, 1),
                "free_converged": free_conv / max(n_mb, 1)}

    # ------------------------------------------------------------------
    # driver
    # ------------------------------------------------------------------

    def train(self) -> dict:
        cfg = self.cfg
        try:
            while self.sample_count < cfg.max_training_samples:
                buf = self.rollout()
                self.sample_count += buf.n_samples
                row = self.update(buf)
                self.update_count += 1
                row["update"] = self.update_count
                row["samples"] = self.sample_count
                self.metrics.append(row)
        except NumericalFailure:
            self._write_artifacts(suffix="failed")
            raise
        self._write_artifacts()
        recent = [m["mean_reward"] for m in self.metrics[-10:]]
        return {"updates": self.update_count, "samples": self.sample_count,
                "final_reward": float(np.mean(recent)) if recent else 0.0,
                "rollbacks": int(sum(m["rolled_back"] for m in self.metrics))}

    def _write_artifacts(self, suffix: str = "final") -> None:
        if self.out_dir is None:
            return
        os.makedirs(self.out_dir, exist_ok=True)
        write_metrics(os.path.join(self.out_dir, "metrics.csv"), self.metrics)
        self.save_checkpoint(os.path.join(self.out_dir, f"{suffix}.bundle"))

    def save_checkpoint(self, path: str) -> None:
        save_bundle(path, self.cfg.to_yaml(), self.cfg.config_hash(),
                    self.agent.policy_net, self.agent.value_net,
                    self.agent.state_arrays(), self.sample_count, self.update_count)


def write_metrics(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def read_metrics(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
