"""Reduced-order quadruped locomotion environment.

The full controller stack is real — Hopf oscillators, foot-trajectory
generation, leg IK, residual integration, and PD torques run at 1 kHz
exactly as they would on hardware.  Only the rigid-body physics is replaced
by a reduced-order model: forward speed tracks the propulsion implied by
stance-foot motion (scaled by friction and terrain drag), roll/pitch are a
lightly damped second-order pair excited by terrain roughness and damped
further by well-aligned residual corrections, and stumbles briefly cut the
forward speed with probability scaled by the local height variance.

All reduced-order coefficients live in :class:`SurrogateParams`.

Each environment owns an RNG stream derived from (seed, env index) and
draws a fixed number of variates per step and per reset, so seeded runs
are reproducible and comparable across difficulty levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cpg import (DT_LOW, LIMB_SIDE_SIGN, LegGeometry, LowLevelController, OscillatorBank,
                   TICKS_PER_ACTION, TrajectoryParams, clamp_to_workspace, foot_target,
                   foot_target_rate, leg_ik, pd_torque, wrap_angle)
from ..errors import ConfigError
from .core import StepResult
from .rewards import reward_terms
from .terrain import FIELD_X, FIELD_Y, MIN_HEIGHT, _grid_shape, generate_terrain

OBS_DIM_CPG = 63
OBS_DIM_RES = 87
ACTION_DIM = 12
DT_RL = DT_LOW * TICKS_PER_ACTION     # 0.01 s
MAX_EPISODE_STEPS = 2000
FALL_ANGLE = 0.6                       # |roll| or |pitch| beyond this is a fall [rad]
V_X_UPPER = 0.5                        # command sampling upper bound [m/s]
GRAVITY = 9.81


@dataclass
class SurrogateParams:
    """Every reduced-order body coefficient in one place."""

    joint_inertia: float = 0.01        # reflected inertia per joint [kg m^2]
    tau_v: float = 0.25                # forward-speed response time [s]
    k_prop: float = 1.8                # stance-foot speed -> body speed gain
    drag_rough: float = 6.0            # fractional speed loss per m of roughness
    drag_cap: float = 0.5
    stumble_gain: float = 0.5          # p = gain * rough * (|v|/0.5), per RL step
    stumble_cap: float = 0.2
    stumble_dip: float = 0.4           # fractional speed loss on a stumble
    att_freq: float = 6.0              # roll/pitch natural frequency [rad/s]
    att_damping: float = 0.3           # damping ratio without residual help
    att_excite: float = 250.0          # attitude noise gain per m roughness
    att_stumble_kick: float = 2.5      # rate kick per m roughness on stumble [rad/s/m]
    res_damping_gain: float = 2.0      # corrective residual -> extra damping
    res_damping_floor: float = -0.3    # worst-case damping reduction from misalignment
    k_vy: float = 0.5                  # heading deflection -> lateral speed
    k_yaw: float = 1.5                 # heading deflection -> yaw rate
    k_vz: float = 0.5                  # stance foot z-rate -> body heave
    base_mass: float = 12.0            # robot mass before load [kg]
    push_interval: float = 5.0         # mean seconds between pushes
    push_dv: float = 0.5               # horizontal speed jump per push [m/s]


# Domain randomization ranges (training) and the fixed evaluation values.
DR_FRICTION = (0.5, 2.5)
DR_MASS_RATIO = (0.5, 1.5)
DR_LOAD = (0.0, 5.0)
DR_BODY_H = (0.22, 0.32)
DR_SWING_CLEARANCE = {1: (0.03, 0.20), 2: (0.15, 0.20)}
DR_STANCE_PENETRATION = (0.0, 0.02)

EVAL_FIXED = dict(friction=1.5, mass_ratio=1.0, load=0.0, terrain_side=0.4,
                  body_h=0.25, swing_clearance=0.1, stance_penetration=0.02)


def _nan_padded_window_std(heights: np.ndarray) -> np.ndarray:
    """Std of each cell's 3x3 neighborhood, edges using only in-grid cells."""
    nx, ny = heights.shape
    padded = np.full((nx + 2, ny + 2), np.nan)
    padded[1:-1, 1:-1] = heights
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    return np.nanstd(windows, axis=(-2, -1))


class QuadrupedEnv:
    """Vectorized surrogate quadruped; see the module docstring.

    ``step`` takes the CPG parameter action (N, 12) and, in stage 2, the
    residual-rate action (N, 12).  Observations are always the 87-D residual
    layout; the first 63 dims are exactly the CPG layout, so stage-1 callers
    slice ``obs[:, :63]``.
    """

    def __init__(self, n_envs: int, stage: int = 1, seed: int = 0,
                 h_max: float | None = None, eval_mode: bool = False,
                 pushes: bool | None = None, params: SurrogateParams | None = None,
                 command: np.ndarray | None = None, env_offset: int = 0,
                 auto_reset: bool = True, max_episode_steps: int = MAX_EPISODE_STEPS):
        if stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {stage}")
        self.n_envs = n_envs
        self.stage = stage
        self.params = params or SurrogateParams()
        self.obs_dim = OBS_DIM_RES
        self.action_dim = ACTION_DIM
        self.h_max = h_max if h_max is not None else (MIN_HEIGHT if stage == 1 else 0.12)
        self.eval_mode = eval_mode
        self.pushes = (not eval_mode) if pushes is None else pushes
        self.auto_reset = auto_reset
        self.max_episode_steps = max_episode_steps
        self.fixed_command = None if command is None else np.asarray(command, dtype=np.float64)
        self.rngs = [np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, env_offset + i])))
                     for i in range(n_envs)]
        self.geometry = LegGeometry()
        self.fault_count = 0
        self._allocate()
        self.reset()

    # ------------------------------------------------------------------
    # state management
    # ------------------------------------------------------------------

    def _allocate(self):
        n = self.n_envs
        nx, ny = _grid_shape()
        self.bank = OscillatorBank.resting(batch_shape=(n,))
        self.traj = TrajectoryParams(h=np.full((n, 1), 0.25), g_c=np.full((n, 1), 0.1),
                                     g_p=np.full((n, 1), 0.02))
        self.ctrl = LowLevelController(bank=self.bank, geometry=self.geometry,
                                       trajectory=self.traj)
        self.sides = np.full(n, 0.4)
        self.heights = np.zeros((n, nx, ny))
        self.rough_field = np.zeros((n, nx, ny))
        self.q = np.zeros((n, 4, 3))
        self.q_dot = np.zeros((n, 4, 3))
        self.pos = np.zeros((n, 2))
        self.yaw = np.zeros(n)
        self.v = np.zeros(n)          # body-frame forward speed
        self.v_y = np.zeros(n)
        self.v_z = np.zeros(n)
        self.roll = np.zeros(n)
        self.pitch = np.zeros(n)
        self.roll_rate = np.zeros(n)
        self.pitch_rate = np.zeros(n)
        self.yaw_rate = np.zeros(n)
        self.prev_vel = np.zeros((n, 3))
        self.command = np.zeros((n, 3))
        self.friction = np.full(n, 1.5)
        self.mass_mult = np.ones(n)
        self.load = np.zeros(n)
        self.steps = np.zeros(n, dtype=int)
        self.distance = np.zeros(n)
        self.episode_done = np.zeros(n, dtype=bool)   # latched when auto_reset is off
        self.last_res_rate = np.zeros((n, 12))

    def _reset_rows(self, idx: np.ndarray) -> None:
        for i in idx:
            rng = self.rngs[i]
            terrain = generate_terrain(
                rng, self.h_max,
                side=EVAL_FIXED["terrain_side"] if self.eval_mode else None)
            self.sides[i] = terrain.side
            self.heights[i] = terrain.heights
            self.rough_field[i] = _nan_padded_window_std(terrain.heights)

            theta_a = rng.uniform(-np.pi, np.pi)
            theta_b = wrap_angle(theta_a + np.pi)
            self.bank.r[i] = rng.uniform(1.0, 2.0, size=4)
            self.bank.r_dot[i] = 0.0
            self.bank.theta[i] = [theta_a, theta_b, theta_b, theta_a]
            self.bank.phi[i] = rng.uniform(-np.pi / 12, np.pi / 12, size=4)
            self.bank.mu[i] = 1.0
            self.bank.omega[i] = 0.0
            self.bank.psi[i] = 0.0

            if self.eval_mode:
                self.friction[i] = EVAL_FIXED["friction"]
                self.mass_mult[i] = EVAL_FIXED["mass_ratio"]
                self.load[i] = EVAL_FIXED["load"]
                self.traj.h[i] = EVAL_FIXED["body_h"]
                self.traj.g_c[i] = EVAL_FIXED["swing_clearance"]
                self.traj.g_p[i] = EVAL_FIXED["stance_penetration"]
            else:
                self.friction[i] = rng.uniform(*DR_FRICTION)
                self.mass_mult[i] = rng.uniform(*DR_MASS_RATIO)
                self.load[i] = rng.uniform(*DR_LOAD)
                self.traj.h[i] = rng.uniform(*DR_BODY_H)
                self.traj.g_c[i] = rng.uniform(*DR_SWING_CLEARANCE[self.stage])
                self.traj.g_p[i] = rng.uniform(*DR_STANCE_PENETRATION)

            if self.fixed_command is not None:
                self.command[i] = self.fixed_command
            else:
                self.command[i] = [rng.uniform(0.0, V_X_UPPER), 0.0, 0.0]

        # joints start exactly on the CPG targets, zero residual and rates
        self.ctrl.q_res[idx] = 0.0
        target = foot_target(self.bank.r[idx], self.bank.theta[idx],
                             self.bank.phi[idx],
                             TrajectoryParams(h=self.traj.h[idx], g_c=self.traj.g_c[idx],
                                              g_p=self.traj.g_p[idx]))
        target[..., 1] += LIMB_SIDE_SIGN * self.geometry.hip_offset
        target, _ = clamp_to_workspace(target, self.geometry)
        self.q[idx] = leg_ik(target, self.geometry, strict=False)
        self.q_dot[idx] = 0.0
        self.pos[idx] = 0.0
        self.yaw[idx] = 0.0
        self.v[idx] = 0.0
        self.v_y[idx] = 0.0
        self.v_z[idx] = 0.0
        self.roll[idx] = 0.0
        self.pitch[idx] = 0.0
        self.roll_rate[idx] = 0.0
        self.pitch_rate[idx] = 0.0
        self.yaw_rate[idx] = 0.0
        self.prev_vel[idx] = 0.0
        self.steps[idx] = 0
        self.distance[idx] = 0.0
        self.episode_done[idx] = False
        self.last_res_rate[idx] = 0.0

    def reset(self) -> np.ndarray:
        self._reset_rows(np.arange(self.n_envs))
        return self._observe()

    # ------------------------------------------------------------------
    # observation
    # ------------------------------------------------------------------

    def _observe(self) -> np.ndarray:
        n = self.n_envs
        vel = np.stack([self.v, self.v_y, self.v_z], axis=-1)
        lin_acc = (vel - self.prev_vel) / DT_RL + np.array([0.0, 0.0, GRAVITY])
        contact = (np.sin(self.bank.theta) <= 0.0).astype(np.float64)
        return np.concatenate([
            self.q.reshape(n, 12),
            self.q_dot.reshape(n, 12),
            np.stack([self.roll, self.pitch], axis=-1),
            np.stack([self.roll_rate, self.pitch_rate, self.yaw_rate], axis=-1),
            lin_acc,
            contact,
            self.bank.state_vector(),
            self.command,
            self.ctrl.q_res.reshape(n, 12),
            self.last_res_rate,
        ], axis=-1)

    def _local_roughness(self) -> np.ndarray:
        ix = np.clip(((self.pos[:, 0] - FIELD_X[0]) // self.sides).astype(int),
                     0, self.heights.shape[1] - 1)
        iy = np.clip(((self.pos[:, 1] - FIELD_Y[0]) // self.sides).astype(int),
                     0, self.heights.shape[2] - 1)
        return self.rough_field[np.arange(self.n_envs), ix, iy]

    # ------------------------------------------------------------------
    # dynamics
    # ------------------------------------------------------------------

    def step(self, cpg_action: np.ndarray, res_rate: np.ndarray | None = None) -> StepResult:
        p = self.params
        n = self.n_envs
        if self.stage == 1 and res_rate is not None:
            raise ConfigError("residual actions are disabled in stage 1")
        snapshot = self._snapshot() if not self.auto_reset else None

        if res_rate is not None:
            self.last_res_rate = np.clip(np.asarray(res_rate, dtype=np.float64), -5.0, 5.0)

        # 1 kHz controller + joint servos for one RL step
        inertia = (p.joint_inertia * self.mass_mult)[:, None, None]
        power = np.zeros(n)
        for _ in range(TICKS_PER_ACTION):
            tau, _ = self.ctrl.tick(cpg_action, res_rate, self.q, self.q_dot, DT_LOW)
            self.q_dot = self.q_dot + tau / inertia * DT_LOW
            self.q = self.q + self.q_dot * DT_LOW
            power += np.sum(tau * self.q_dot, axis=(-2, -1))
        power /= TICKS_PER_ACTION

        rough = self._local_roughness()

        # forward propulsion from stance-foot motion
        rate = foot_target_rate(self.bank, self.traj)
        stance = np.sin(self.bank.theta) <= 0.0
        n_stance = np.maximum(stance.sum(axis=-1), 1)
        prop = -(rate[..., 0] * stance).sum(axis=-1) / n_stance * p.k_prop
        eff = np.clip(self.friction / 1.5, 0.4, 1.0) \
            * (1.0 - np.minimum(p.drag_rough * rough, p.drag_cap))
        v_target = prop * eff

        # fixed per-step draws: 2 normals (attitude), 3 uniforms
        # (stumble, push trigger, push direction)
        normals = np.empty((n, 2))
        uniforms = np.empty((n, 3))
        for i in range(n):
            normals[i] = self.rngs[i].normal(size=2)
            uniforms[i] = self.rngs[i].random(size=3)

        tau_v = p.tau_v * self.mass_mult * (1.0 + self.load / p.base_mass)
        self.v = self.v + (v_target - self.v) * DT_RL / tau_v
        p_stumble = np.minimum(p.stumble_gain * rough * np.abs(self.v) / 0.5, p.stumble_cap)
        stumble = uniforms[:, 0] < p_stumble
        self.v = np.where(stumble, self.v * (1.0 - p.stumble_dip), self.v)

        # heading, lateral and vertical channels from the direction phases
        sphi = np.mean(np.sin(self.bank.phi), axis=-1)
        self.v_y = p.k_vy * self.v * sphi
        self.yaw_rate = p.k_yaw * self.v * sphi
        self.yaw = wrap_angle(self.yaw + self.yaw_rate * DT_RL)
        self.v_z = p.k_vz * (rate[..., 2] * stance).sum(axis=-1) / n_stance

        # roll/pitch: damped oscillator driven by roughness noise; residual
        # corrections aligned against the current lean add damping
        corrective = (-np.sign(self.roll)
                      * np.mean(LIMB_SIDE_SIGN * self.ctrl.q_res[..., 0], axis=-1)
                      - np.sign(self.pitch)
                      * np.mean(np.array([1.0, 1.0, -1.0, -1.0]) * self.ctrl.q_res[..., 1],
                                axis=-1))
        damping_mult = 1.0 + p.res_damping_gain * np.clip(corrective, p.res_damping_floor, 1.0)
        omega_a, zeta = p.att_freq, p.att_damping
        excite = p.att_excite * rough * (0.3 + np.abs(self.v)) * np.sqrt(DT_RL)
        kick = np.where(stumble, p.att_stumble_kick * rough * np.sign(normals[:, 0]), 0.0)
        for angle, rate_attr, noise in (("roll", "roll_rate", normals[:, 0]),
                                        ("pitch", "pitch_rate", normals[:, 1])):
            th = getattr(self, angle)
            thd = getattr(self, rate_attr)
            thd = thd + (-omega_a ** 2 * th - 2 * zeta * omega_a * damping_mult * thd) * DT_RL \
                + excite * noise + kick
            th = th + thd * DT_RL
            setattr(self, angle, th)
            setattr(self, rate_attr, thd)

        # random horizontal pushes (Poisson train via per-step Bernoulli)
        if self.pushes:
            trigger = uniforms[:, 1] < DT_RL / p.push_interval
            angle_p = 2.0 * np.pi * uniforms[:, 2]
            self.v = np.where(trigger, self.v + p.push_dv * np.cos(angle_p), self.v)
            self.v_y = np.where(trigger, self.v_y + p.push_dv * np.sin(angle_p), self.v_y)

        self.pos[:, 0] += (self.v * np.cos(self.yaw) - self.v_y * np.sin(self.yaw)) * DT_RL
        self.pos[:, 1] += (self.v * np.sin(self.yaw) + self.v_y * np.cos(self.yaw)) * DT_RL
        self.distance += self.v * DT_RL
        self.steps += 1

        fall = (np.abs(self.roll) > FALL_ANGLE) | (np.abs(self.pitch) > FALL_ANGLE)
        fault = ~np.isfinite(np.stack([self.v, self.roll, self.pitch], axis=-1)).all(axis=-1)
        fault |= ~np.isfinite(self.q.reshape(n, -1)).all(axis=-1)
        if fault.any():
            self.fault_count += int(fault.sum())
            fall |= fault
        done = fall | (self.steps >= self.max_episode_steps)

        reward = reward_terms(self.v, self.v_y, self.v_z, self.roll_rate, self.pitch_rate,
                              self.yaw_rate, self.command, power, DT_RL, self.stage)["total"]
        info = dict(v_x=self.v.copy(), power=power, roll=self.roll.copy(),
                    pitch=self.pitch.copy(), roll_rate=self.roll_rate.copy(),
                    pitch_rate=self.pitch_rate.copy(), distance=self.distance.copy(),
                    stumble=stumble, fault=fault)

        obs_now = self._observe()   # true next observation, pre-reset

        if self.auto_reset:
            self.prev_vel = np.stack([self.v, self.v_y, self.v_z], axis=-1)
            obs = obs_now
            if done.any():
                idx = np.flatnonzero(done)
                self._reset_rows(idx)
                obs = obs_now.copy()
                obs[idx] = self._observe()[idx]
            return StepResult(obs=obs, reward=reward, done=done, fall=fall,
                              terminal_obs=obs_now, info=info)

        # latched mode: rows that finished earlier are rolled back to their
        # frozen state; they report done=True and zero reward from then on
        already = self.episode_done.copy()
        if already.any():
            self._restore(snapshot, np.flatnonzero(already))
            reward = np.where(already, 0.0, reward)
            fall = fall & ~already
        live = ~already
        vel_now = np.stack([self.v, self.v_y, self.v_z], axis=-1)
        self.prev_vel[live] = vel_now[live]
        self.episode_done |= done
        return StepResult(obs=obs_now, reward=reward, done=self.episode_done.copy(),
                          fall=fall, terminal_obs=obs_now, info=info)

    # ------------------------------------------------------------------
    # freeze support for fixed-episode evaluation
    # ------------------------------------------------------------------

    _STATE_FIELDS = ("q", "q_dot", "pos", "yaw", "v", "v_y", "v_z", "roll", "pitch",
                     "roll_rate", "pitch_rate", "yaw_rate", "prev_vel", "steps",
                     "distance", "last_res_rate")

    def _snapshot(self) -> dict:
        state = {f: getattr(self, f).copy() for f in self._STATE_FIELDS}
        state["bank"] = self.bank.copy()
        state["q_res"] = self.ctrl.q_res.copy()
        return state

    def _restore(self, snapshot: dict, idx: np.ndarray) -> None:
        for f in self._STATE_FIELDS:
            getattr(self, f)[idx] = snapshot[f][idx]
        for f in ("r", "r_dot", "theta", "phi", "mu", "omega", "psi"):
            getattr(self.bank, f)[idx] = getattr(snapshot["bank"], f)[idx]
        self.ctrl.q_res[idx] = snapshot["q_res"][idx]
