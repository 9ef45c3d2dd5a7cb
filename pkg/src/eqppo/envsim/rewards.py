"""Locomotion reward: velocity tracking, vibration penalties, motor power.

All terms are per RL step and already multiplied by the step length, so
summing rewards over an episode approximates a time integral.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError

STAGE_CONSTANTS = {1: dict(alpha_vx=3.0, d_r1=0.25),
                   2: dict(alpha_vx=6.0, d_r1=0.04)}
D_R2 = 0.25


def closeness_r1(x: np.ndarray, d_r1: float) -> np.ndarray:
    return np.exp(-np.square(x) / d_r1)


def closeness_r2(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.square(x) / D_R2)


def reward_terms(v_x, v_y, v_z, roll_rate, pitch_rate, yaw_rate,
                 command: np.ndarray, power, dt_rl: float, stage: int) -> dict:
    """Per-term reward breakdown; key "total" is the exact sum of the rest.

    ``command`` is (..., 3) = (v_x target, v_y target, yaw-rate target);
    ``power`` is the total motor power sum tau_i * qdot_i [W].
    """
    if stage not in STAGE_CONSTANTS:
        raise ConfigError(f"stage must be 1 or 2, got {stage}")
    c = STAGE_CONSTANTS[stage]
    command = np.asarray(command, dtype=np.float64)
    terms = {
        "track_vx": c["alpha_vx"] * dt_rl * closeness_r1(v_x - command[..., 0], c["d_r1"]),
        "track_vy": 0.75 * dt_rl * closeness_r2(v_y - command[..., 1]),
        "track_yaw": 0.50 * dt_rl * closeness_r2(yaw_rate - command[..., 2]),
        "pen_vz": -2.0 * dt_rl * np.square(v_z),
        "pen_rates": -0.05 * dt_rl * (np.square(roll_rate) + np.square(pitch_rate)),
        "pen_power": -0.001 * dt_rl * np.asarray(power, dtype=np.float64),
    }
    terms["total"] = sum(terms.values())
    return terms
