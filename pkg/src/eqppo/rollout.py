"""Rollout storage and generalized advantage estimation.

Episode-boundary semantics: `fall` kills the value bootstrap (the robot hit
the ground, no future reward), while `done` without `fall` is a timeout and
keeps bootstrapping through next_value.  Both cut the advantage recursion.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

CSV_COLUMNS = ("env", "t", "reward", "log_prob_rollout", "done", "fall",
               "value", "next_value", "obs", "action")


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    log_prob_rollout: float
    done: bool
    fall: bool
    value: float
    next_value: float


class RolloutBuffer:
    """Fixed-horizon buffer over N parallel environments.

    ``add`` is called once per control step with stacked per-env arrays;
    after T steps the stacked views expose (T, N, ...) arrays for GAE and
    flattening.
    """

    def __init__(self, n_envs: int):
        self.n_envs = n_envs
        self.obs: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []
        self.rewards: list[np.ndarray] = []
        self.log_probs: list[np.ndarray] = []
        self.dones: list[np.ndarray] = []
        self.falls: list[np.ndarray] = []
        self.values: list[np.ndarray] = []
        self.next_values: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def n_samples(self) -> int:
        return len(self.rewards) * self.n_envs

    def add(self, obs, action, reward, log_prob, done, fall, value, next_value) -> None:
        self.obs.append(np.asarray(obs))
        self.actions.append(np.asarray(action))
        self.rewards.append(np.asarray(reward, dtype=np.float64))
        self.log_probs.append(np.asarray(log_prob, dtype=np.float64))
        self.dones.append(np.asarray(done, dtype=bool))
        self.falls.append(np.asarray(fall, dtype=bool))
        self.values.append(np.asarray(value, dtype=np.float64))
        self.next_values.append(np.asarray(next_value, dtype=np.float64))

    def stacked(self) -> dict[str, np.ndarray]:
        if not self.rewards:
            raise ValueError("empty rollout buffer")
        return {
            "obs": np.stack(self.obs),
            "actions": np.stack(self.actions),
            "rewards": np.stack(self.rewards),
            "log_probs": np.stack(self.log_probs),
            "dones": np.stack(self.dones),
            "falls": np.stack(self.falls),
            "values": np.stack(self.values),
            "next_values": np.stack(self.next_values),
        }

    def dump_csv(self, fh: io.TextIOBase, max_rows: int | None = None) -> int:
        """Debug dump, one transition per row; vectors are ';'-joined."""
        fh.write(",".join(CSV_COLUMNS) + "\n")
        rows = 0
        for t in range(len(self.rewards)):
            for e in range(self.n_envs):
                if max_rows is not None and rows >= max_rows:
                    return rows
                obs = ";".join(f"{v:.6g}" for v in np.atleast_2d(self.obs[t])[e])
                act = ";".join(f"{v:.6g}" for v in np.atleast_2d(self.actions[t])[e])
                fh.write(f"{e},{t},{self.rewards[t][e]:.9g},{self.log_probs[t][e]:.9g},"
                         f"{int(self.dones[t][e])},{int(self.falls[t][e])},"
                         f"{self.values[t][e]:.9g},{self.next_values[t][e]:.9g},{obs},{act}\n")
                rows += 1
        return rows


def gae(rewards: np.ndarray, values: np.ndarray, next_values: np.ndarray,
        dones: np.ndarray, falls: np.ndarray, gamma: float, lam: float
        ) -> tuple[np.ndarray, np.ndarray]:
    """Backward-recursive advantage estimate for one or more environments.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - fall_t) - V(s_t)
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}

    Arrays are (T,) or (T, N), time-major.  Returns (advantages, returns)
    with returns = advantages + values, in float64.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("gae requires at least one transition")
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    not_fall = 1.0 - np.asarray(falls, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)

    deltas = rewards + gamma * next_values * not_fall - values
    advantages = np.zeros_like(deltas)
    carry = np.zeros_like(deltas[-1])
    for t in range(deltas.shape[0] - 1, -1, -1):
        carry = deltas[t] + gamma * lam * not_done[t] * carry
        advantages[t] = carry
    return advantages, advantages + values


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Zero-mean unit-std over the whole rollout (std floored by 1e-8)."""
    adv = np.asarray(advantages, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class ProcessedBatch:
    """Flattened, fully preprocessed rollout ready for minibatch updates."""

    obs: np.ndarray              # post-normalize, post-expansion
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray       # normalized
    return_targets: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]
