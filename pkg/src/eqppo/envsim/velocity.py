"""One-dimensional velocity-tracking task for fast desk-scale training runs.

The agent commands a target speed through a first-order lag and is rewarded
for holding the per-episode reference; same reward shape, episode handling,
and bootstrapping semantics as the locomotion task, at a fraction of the
compute.
"""

from __future__ import annotations

import numpy as np

from .core import StepResult
from .rewards import closeness_r1

OBS_DIM = 4
ACTION_DIM = 1
DEFAULT_EPISODE_LEN = 200
V_TARGET_RANGE = (0.0, 0.5)
ACTION_LIMIT = 1.0


class VelocityTrackEnv:
    """Vectorized scalar plant: v' = (u - v)/tau, reward alpha*dt*f_r1(v-v*).

    Observation: (v, v*, v - v*, previous action).  Episodes end by timeout
    only (``fall`` is always False), so the advantage estimator bootstraps
    through episode boundaries.
    """

    def __init__(self, n_envs: int, seed: int = 0, tau: float = 0.25, dt: float = 0.01,
                 alpha: float = 3.0, d_r1: float = 0.25,
                 episode_len: int = DEFAULT_EPISODE_LEN, env_offset: int = 0):
        self.n_envs = n_envs
        self.obs_dim = OBS_DIM
        self.action_dim = ACTION_DIM
        self.tau, self.dt = tau, dt
        self.alpha, self.d_r1 = alpha, d_r1
        self.episode_len = episode_len
        self.rngs = [np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, env_offset + i])))
                     for i in range(n_envs)]
        self.v = np.zeros(n_envs)
        self.v_target = np.zeros(n_envs)
        self.prev_u = np.zeros(n_envs)
        self.steps = np.zeros(n_envs, dtype=int)
        self.reset()

    def _reset_rows(self, idx: np.ndarray) -> None:
        for i in idx:
            self.v_target[i] = self.rngs[i].uniform(*V_TARGET_RANGE)
        self.v[idx] = 0.0
        self.prev_u[idx] = 0.0
        self.steps[idx] = 0

    def reset(self) -> np.ndarray:
        self._reset_rows(np.arange(self.n_envs))
        return self._observe()

    def _observe(self) -> np.ndarray:
        return np.stack([self.v, self.v_target, self.v - self.v_target, self.prev_u], axis=-1)

    def step(self, action: np.ndarray) -> StepResult:
        u = np.clip(np.asarray(action, dtype=np.float64).reshape(self.n_envs), -ACTION_LIMIT,
                    ACTION_LIMIT)
        self.v = self.v + (u - self.v) * self.dt / self.tau
        self.prev_u = u
        self.steps += 1
        reward = self.alpha * self.dt * closeness_r1(self.v - self.v_target, self.d_r1)
        done = self.steps >= self.episode_len
        fall = np.zeros(self.n_envs, dtype=bool)
        obs_now = self._observe()
        obs = obs_now
        if done.any():
            idx = np.flatnonzero(done)
            self._reset_rows(idx)
            obs = obs_now.copy()
            obs[idx] = self._observe()[idx]
        return StepResult(obs=obs, reward=reward, done=done, fall=fall,
                          terminal_obs=obs_now, info={})
