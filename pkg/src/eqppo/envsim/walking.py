"""Walking-test evaluation: velocity-scaled distance targets within a time
budget, plus duration-weighted stability and effort statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadruped import DT_RL, QuadrupedEnv, SurrogateParams

BASE_DISTANCE = 5.0            # required meters at the reference velocity
BASE_VELOCITY = 0.3
TEST_SECONDS = 30.0
V_TARGET_GRID = (0.1, 0.3, 0.5)
H_MAX_GRID = (0.02, 0.04, 0.06, 0.08, 0.10, 0.12)

METRIC_COLUMNS = ("v_target", "h_max", "episodes", "success_rate", "mean_speed",
                  "mean_power", "mean_abs_roll", "mean_abs_pitch",
                  "mean_abs_roll_rate", "mean_abs_pitch_rate", "mean_duration_s")


def required_distance(v_target: float) -> float:
    """Distance scales proportionally with the commanded velocity."""
    return BASE_DISTANCE * v_target / BASE_VELOCITY


@dataclass
class WalkingMetrics:
    v_target: float
    h_max: float
    episodes: int
    success_rate: float
    mean_speed: float
    mean_power: float
    mean_abs_roll: float
    mean_abs_pitch: float
    mean_abs_roll_rate: float
    mean_abs_pitch_rate: float
    mean_duration_s: float

    def csv_row(self) -> str:
        return ",".join(f"{getattr(self, c):.6g}" for c in METRIC_COLUMNS)


class ScriptedGaitPolicy:
    """Open-loop trot: constant oscillator commands sized for a target speed.

    ``quality`` scales the commanded frequency; 1.0 is the nominal gait.
    The policy ignores observations, which keeps evaluation episodes
    comparable across difficulty levels under shared seeds.
    """

    def __init__(self, v_target: float, quality: float = 1.0,
                 params: SurrogateParams | None = None):
        p = params or SurrogateParams()
        mu = float(np.clip(1.0 + 2.0 * v_target, 1.0, 2.0))
        stride_speed = p.k_prop * 0.15 * (mu - 1.0) * (2.0 / np.pi)
        omega = float(np.clip(v_target / stride_speed, 0.0, 3.0)) if mu > 1.0 else 0.0
        self.action = np.concatenate([np.full(4, mu), np.full(4, omega * quality),
                                      np.zeros(4)])

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return np.tile(self.action, (obs.shape[0], 1))


def walking_test(policy, v_target: float, h_max: float, episodes: int = 100,
                 seed: int = 0, res_policy=None, params: SurrogateParams | None = None,
                 max_seconds: float = TEST_SECONDS) -> WalkingMetrics:
    """Run ``episodes`` seeded evaluation episodes and aggregate.

    ``policy`` maps the (N, 87) observation batch to CPG actions (N, 12);
    ``res_policy``, if given, supplies residual rates the same way.
    Success means covering ``required_distance(v_target)`` within the time
    budget before falling.  All per-step statistics are averaged over alive
    steps, which weights episodes by their duration.
    """
    empty = WalkingMetrics(v_target, h_max, 0, *([0.0] * 8))
    if episodes <= 0:
        return empty
    target = required_distance(v_target)
    max_steps = int(round(max_seconds / DT_RL))
    env = QuadrupedEnv(n_envs=episodes, stage=2 if res_policy is not None else 1,
                       seed=seed, h_max=h_max, eval_mode=True, pushes=False,
                       params=params, command=np.array([v_target, 0.0, 0.0]),
                       auto_reset=False, max_episode_steps=max_steps)
    obs = env.reset()

    alive = np.ones(episodes, dtype=bool)
    reached = np.zeros(episodes, dtype=bool)
    duration = np.zeros(episodes, dtype=int)
    sums = {k: 0.0 for k in ("speed", "power", "roll", "pitch", "roll_rate", "pitch_rate")}

    for _ in range(max_steps):
        act = policy(obs)
        res = res_policy(obs) if res_policy is not None else None
        result = env.step(act, res)
        duration[alive] += 1
        sums["speed"] += result.info["v_x"][alive].sum()
        sums["power"] += result.info["power"][alive].sum()
        sums["roll"] += np.abs(result.info["roll"][alive]).sum()
        sums["pitch"] += np.abs(result.info["pitch"][alive]).sum()
        sums["roll_rate"] += np.abs(result.info["roll_rate"][alive]).sum()
        sums["pitch_rate"] += np.abs(result.info["pitch_rate"][alive]).sum()
        reached |= alive & (result.info["distance"] >= target)
        alive &= ~result.done
        obs = result.obs
        if not alive.any():
            break

    total_steps = max(int(duration.sum()), 1)
    return WalkingMetrics(
        v_target=v_target, h_max=h_max, episodes=episodes,
        success_rate=float(reached.mean()),
        mean_speed=sums["speed"] / total_steps,
        mean_power=sums["power"] / total_steps,
        mean_abs_roll=sums["roll"] / total_steps,
        mean_abs_pitch=sums["pitch"] / total_steps,
        mean_abs_roll_rate=sums["roll_rate"] / total_steps,
        mean_abs_pitch_rate=sums["pitch_rate"] / total_steps,
        mean_duration_s=float(duration.mean() * DT_RL),
    )
