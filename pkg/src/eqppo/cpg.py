"""Hopf-oscillator gait generator and the 1 kHz low-level leg controller.

Pipeline per 1 ms tick: advance the four oscillators, turn their states
into Cartesian foot targets, solve each leg's 3-DoF inverse kinematics,
add the integrated residual joint angles, and close a PD loop on the
twelve joints.  The high-level policy only retunes oscillator parameters
(and residual rates); it never touches joints directly.

Everything broadcasts over leading batch dimensions: oscillator states are
(..., 4), joint vectors (..., 4, 3) with joints ordered (hip, thigh, calf)
and limbs ordered (FR, FL, RR, RL).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

HOPF_GAIN = 150.0          # amplitude convergence gain a [1/s]
D_STEP = 0.15              # stride length [m]
RES_LIMIT = 1.0            # residual integration bound [rad]
RES_RATE_LIMIT = 5.0       # residual rate command range [rad/s]
KP, KD = 100.0, 2.0        # PD gains
TORQUE_LIMIT = 33.5        # [N m]
DT_LOW = 0.001             # low-level control period [s]
TICKS_PER_ACTION = 10      # policy runs at 100 Hz

# commanded oscillator parameter ranges (mu, omega, psi)
MU_RANGE = (1.0, 2.0)
OMEGA_RANGE = (0.0, 3.0)
PSI_RANGE = (-1.5, 1.5)

LIMB_NAMES = ("FR", "FL", "RR", "RL")
LIMB_SIDE_SIGN = np.array([-1.0, 1.0, -1.0, 1.0])  # right legs offset -y, left +y


def wrap_angle(x: np.ndarray) -> np.ndarray:
    """Wrap into [-pi, pi)."""
    return (np.asarray(x) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class OscillatorBank:
    """Four Hopf oscillators: amplitude (2nd order, critically damped at
    gain a) plus two integrated phases each."""

    r: np.ndarray
    r_dot: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    omega: np.ndarray
    psi: np.ndarray
    a: float = HOPF_GAIN

    @classmethod
    def resting(cls, batch_shape: tuple[int, ...] = ()) -> "OscillatorBank":
        shape = batch_shape + (4,)
        return cls(r=np.ones(shape), r_dot=np.zeros(shape), theta=np.zeros(shape),
                   phi=np.zeros(shape), mu=np.ones(shape), omega=np.zeros(shape),
                   psi=np.zeros(shape))

    @classmethod
    def init_trot(cls, rng: np.random.Generator, batch_shape: tuple[int, ...] = ()) -> "OscillatorBank":
        """Random trot start: diagonal limb pairs (FR,RL) and (FL,RR) in
        anti-phase, random amplitudes in [1,2], small direction phases."""
        shape = batch_shape + (4,)
        theta_a = rng.uniform(-np.pi, np.pi, size=batch_shape)
        theta_b = wrap_angle(theta_a + np.pi)
        theta = np.stack([theta_a, theta_b, theta_b, theta_a], axis=-1)
        return cls(r=rng.uniform(1.0, 2.0, size=shape), r_dot=np.zeros(shape),
                   theta=theta, phi=rng.uniform(-np.pi / 12, np.pi / 12, size=shape),
                   mu=np.ones(shape), omega=np.zeros(shape), psi=np.zeros(shape))

    def set_commands(self, mu: np.ndarray, omega: np.ndarray, psi: np.ndarray) -> None:
        self.mu = np.clip(mu, *MU_RANGE)
        self.omega = np.clip(omega, *OMEGA_RANGE)
        self.psi = np.clip(psi, *PSI_RANGE)

    def state_vector(self) -> np.ndarray:
        """Observation encoding: (r, r_dot, sin th, cos th, sin phi, cos phi)
        per limb, concatenated limb-major -> (..., 24)."""
        per_limb = np.stack([self.r, self.r_dot, np.sin(self.theta), np.cos(self.theta),
                             np.sin(self.phi), np.cos(self.phi)], axis=-1)
        return per_limb.reshape(per_limb.shape[:-2] + (24,))

    def copy(self) -> "OscillatorBank":
        return OscillatorBank(self.r.copy(), self.r_dot.copy(), self.theta.copy(),
                              self.phi.copy(), self.mu.copy(), self.omega.copy(),
                              self.psi.copy(), self.a)


def hopf_step(bank: OscillatorBank, dt: float = DT_LOW) -> OscillatorBank:
    """One semi-implicit Euler step, in place; returns the bank.

    r''  = a * (a/4 * (mu - r) - r'), critically damped toward mu;
    theta' = omega; phi' = psi; phases wrapped every step.
    """
    a = bank.a
    r_ddot = a * (0.25 * a * (bank.mu - bank.r) - bank.r_dot)
    bank.r_dot = bank.r_dot + r_ddot * dt
    bank.r = bank.r + bank.r_dot * dt
    bank.theta = wrap_angle(bank.theta + bank.omega * dt)
    bank.phi = wrap_angle(bank.phi + bank.psi * dt)
    return bank


@dataclass
class TrajectoryParams:
    """Foot-path shape: stride scale, body height, swing/stance depths."""

    d_step: float = D_STEP
    h: float = 0.25
    g_c: float = 0.1
    g_p: float = 0.02

    def validate(self, geom: "LegGeometry | None" = None) -> "TrajectoryParams":
        if min(self.d_step, self.h, self.g_c, self.g_p) <= 0:
            raise ConfigError(f"trajectory parameters must be positive: {self}")
        if geom is not None and self.h + self.g_p >= geom.thigh + geom.calf:
            raise ConfigError(
                f"stance depth {self.h + self.g_p} exceeds leg reach "
                f"{geom.thigh + geom.calf}")
        return self


def foot_target(r: np.ndarray, theta: np.ndarray, phi: np.ndarray,
                params: TrajectoryParams) -> np.ndarray:
    """Cartesian foot target in the hip frame, stacked (..., 3).

    x = -d (r-1) cos th cos phi, y = -d (r-1) cos th sin phi,
    z = -h + (g_c if sin th > 0 else g_p) * sin th  (swing arc above -h,
    stance penetration below; both branches meet at z = -h).
    """
    r = np.asarray(r, dtype=np.float64)
    s_th, c_th = np.sin(theta), np.cos(theta)
    amp = -params.d_step * (r - 1.0)
    x = amp * c_th * np.cos(phi)
    y = amp * c_th * np.sin(phi)
    z = -params.h + np.where(s_th > 0, params.g_c, params.g_p) * s_th
    return np.stack([x, y, z], axis=-1)


def foot_target_rate(bank: OscillatorBank, params: TrajectoryParams) -> np.ndarray:
    """Analytic time derivative of `foot_target` under the current bank
    rates (used by the body surrogate to infer ground propulsion)."""
    r, th, ph = bank.r, bank.theta, bank.phi
    s_th, c_th = np.sin(th), np.cos(th)
    s_ph, c_ph = np.sin(ph), np.cos(ph)
    d = params.d_step
    # product rule over r(t), theta(t), phi(t)
    dx = -d * (bank.r_dot * c_th * c_ph
               - (r - 1.0) * s_th * bank.omega * c_ph
               - (r - 1.0) * c_th * s_ph * bank.psi)
    dy = -d * (bank.r_dot * c_th * s_ph
               - (r - 1.0) * s_th * bank.omega * s_ph
               + (r - 1.0) * c_th * c_ph * bank.psi)
    dz = np.where(s_th > 0, params.g_c, params.g_p) * c_th * bank.omega
    return np.stack([dx, dy, dz], axis=-1)


@dataclass
class LegGeometry:
    """3-DoF leg: lateral hip offset, thigh and calf lengths (A1-like
    defaults), hip offset mirrored left/right via LIMB_SIDE_SIGN."""

    hip_offset: float = 0.08505
    thigh: float = 0.2
    calf: float = 0.2
    joint_limits: tuple[float, float] = (-2.9, 2.9)

    def validate(self) -> "LegGeometry":
        if self.thigh <= 0 or self.calf <= 0 or self.hip_offset < 0:
            raise ConfigError(f"invalid leg geometry: {self}")
        return self


class WorkspaceError(ValueError):
    """IK target outside the reachable shell; carries distance to boundary."""

    def __init__(self, message: str, boundary_distance: float):
        super().__init__(message)
        self.boundary_distance = boundary_distance


def leg_fk(q: np.ndarray, geom: LegGeometry) -> np.ndarray:
    """Forward kinematics, hip frame.  q is (..., 4, 3) = (hip roll, thigh
    pitch, calf pitch) per limb; returns foot positions (..., 4, 3)."""
    q = np.asarray(q, dtype=np.float64)
    q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2]
    d_s = LIMB_SIDE_SIGN * geom.hip_offset
    x_p = -geom.thigh * np.sin(q2) - geom.calf * np.sin(q2 + q3)
    z_p = -geom.thigh * np.cos(q2) - geom.calf * np.cos(q2 + q3)
    c1, s1 = np.cos(q1), np.sin(q1)
    y = d_s * c1 - z_p * s1
    z = d_s * s1 + z_p * c1
    return np.stack([x_p, y, z], axis=-1)


def _leg_plane_coords(foot: np.ndarray, geom: LegGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split the target into (x_p, z_p) in the rotated leg plane plus rho,
    the distance from the hip-roll axis in the y-z plane."""
    y, z = foot[..., 1], foot[..., 2]
    rho = np.hypot(y, z)
    d_s = LIMB_SIDE_SIGN * geom.hip_offset
    z_p = -np.sqrt(np.maximum(rho ** 2 - d_s ** 2, 0.0))
    return foot[..., 0], z_p, rho


def clamp_to_workspace(foot: np.ndarray, geom: LegGeometry,
                       margin: float = 0.999) -> tuple[np.ndarray, np.ndarray]:
    """Radially clamp unreachable targets to ``margin`` of the boundary.

    Returns (clamped targets, per-limb bool of whether clamping fired).
    Clamps both the leg-plane extension L and, if the target sits inside
    the hip-offset cylinder, the y-z radial distance.
    """
    foot = np.asarray(foot, dtype=np.float64).copy()
    d = abs(geom.hip_offset)
    y, z = foot[..., 1], foot[..., 2]
    rho = np.hypot(y, z)
    clamped_inner = rho < d / margin
    if np.any(clamped_inner):
        scale = np.where(clamped_inner, (d / margin + 1e-9) / np.maximum(rho, 1e-12), 1.0)
        foot[..., 1] = y * scale
        foot[..., 2] = z * scale

    x_p, z_p, _ = _leg_plane_coords(foot, geom)
    L = np.hypot(x_p, z_p)
    l_max = (geom.thigh + geom.calf) * margin
    l_min = abs(geom.thigh - geom.calf) / margin + 1e-9
    clamped_radial = (L > l_max) | (L < l_min)
    if np.any(clamped_radial):
        L_tgt = np.clip(L, l_min, l_max)
        scale = np.where(clamped_radial, L_tgt / np.maximum(L, 1e-12), 1.0)
        # scaling (x_p, z_p) scales the whole extension; reproject to x,y,z
        x_new = x_p * scale
        zp_new = z_p * scale
        d_s = LIMB_SIDE_SIGN * geom.hip_offset
        rho_new = np.sqrt(d_s ** 2 + zp_new ** 2)
        rho_old = np.maximum(np.hypot(foot[..., 1], foot[..., 2]), 1e-12)
        foot[..., 0] = x_new
        foot[..., 1] = foot[..., 1] * rho_new / rho_old
        foot[..., 2] = foot[..., 2] * rho_new / rho_old
    return foot, clamped_inner | clamped_radial


def leg_ik(foot: np.ndarray, geom: LegGeometry, strict: bool = True) -> np.ndarray:
    """Closed-form geometric IK, knee-bent-backward branch (calf angle <= 0).

    ``foot`` is (..., 4, 3) in the hip frame.  With ``strict`` an
    unreachable target raises :class:`WorkspaceError`; otherwise callers
    are expected to have clamped into the workspace already.
    """
    foot = np.asarray(foot, dtype=np.float64)
    x_p, z_p, rho = _leg_plane_coords(foot, geom)
    d_s = LIMB_SIDE_SIGN * geom.hip_offset

    L = np.hypot(x_p, z_p)
    l_max, l_min = geom.thigh + geom.calf, abs(geom.thigh - geom.calf)
    if strict:
        over = np.maximum(L - l_max, 0.0)
        under = np.maximum(l_min - L, 0.0)
        inner = np.maximum(np.abs(d_s) - rho, 0.0)
        worst = float(np.max(np.maximum(np.maximum(over, under), inner)))
        if worst > 1e-9:  # sub-nanometer slack keeps exact boundary targets legal
            raise WorkspaceError(f"IK target out of reach by {worst:.6f} m", worst)

    # hip roll: rotate the (offset, z_p) leg plane onto the measured (y, z)
    q1 = wrap_angle(np.arctan2(foot[..., 2], foot[..., 1]) - np.arctan2(z_p, d_s))

    # planar 2R, angles measured from straight-down; knee-backward => a3 >= 0
    D = (L ** 2 - geom.thigh ** 2 - geom.calf ** 2) / (2.0 * geom.thigh * geom.calf)
    a3 = np.arccos(np.clip(D, -1.0, 1.0))
    a2 = np.arctan2(z_p, x_p) - np.arctan2(geom.calf * np.sin(a3),
                                           geom.thigh + geom.calf * np.cos(a3))
    q3 = -a3
    q2 = -a2 - 0.5 * np.pi
    return np.stack([q1, wrap_angle(q2), q3], axis=-1)


def integrate_residual(q_res: np.ndarray, q_dot_res: np.ndarray, dt: float = DT_LOW,
                       limit: float = RES_LIMIT) -> np.ndarray:
    """One Euler step of the residual joint angles, clamped to +-limit."""
    return np.clip(q_res + q_dot_res * dt, -limit, limit)


def pd_torque(q: np.ndarray, q_target: np.ndarray, q_dot: np.ndarray,
              kp: float = KP, kd: float = KD, limit: float = TORQUE_LIMIT) -> np.ndarray:
    """tau = clamp(-kp (q - q_target) - kd q_dot, +-limit)."""
    return np.clip(-kp * (np.asarray(q) - q_target) - kd * np.asarray(q_dot), -limit, limit)


@dataclass
class LowLevelController:
    """Holds the oscillator bank and residual integrator for one batch of
    robots; `tick` runs one 1 ms control step.

    Policy actions are held constant across the 10 ticks of a policy step
    by simply calling `tick` ten times with the same arguments.
    """

    bank: OscillatorBank
    geometry: LegGeometry = field(default_factory=LegGeometry)
    trajectory: TrajectoryParams = field(default_factory=TrajectoryParams)
    q_res: np.ndarray | None = None
    workspace_clamps: int = 0

    def __post_init__(self):
        if self.q_res is None:
            self.q_res = np.zeros(self.bank.r.shape[:-1] + (4, 3))

    @classmethod
    def create(cls, batch_shape: tuple[int, ...] = (), rng: np.random.Generator | None = None,
               trot: bool = False, geometry: LegGeometry | None = None,
               trajectory: TrajectoryParams | None = None) -> "LowLevelController":
        """Controller over a fresh oscillator bank: resting by default, or a
        randomized trot when ``trot`` is set (requires ``rng``)."""
        if trot:
            if rng is None:
                raise ConfigError("trot initialization needs an RNG")
            bank = OscillatorBank.init_trot(rng, batch_shape)
        else:
            bank = OscillatorBank.resting(batch_shape)
        return cls(bank=bank, geometry=geometry or LegGeometry(),
                   trajectory=trajectory or TrajectoryParams())

    def tick(self, cpg_action: np.ndarray, res_rate: np.ndarray | None,
             q: np.ndarray, q_dot: np.ndarray, dt: float = DT_LOW
             ) -> tuple[np.ndarray, np.ndarray]:
        """One low-level step; returns (torques, joint targets), (..., 4, 3).

        ``cpg_action`` is (..., 12) ordered [mu x4, omega x4, psi x4];
        ``res_rate`` is (..., 12) joint-ordered residual rates or None.
        """
        act = np.asarray(cpg_action, dtype=np.float64)
        self.bank.set_commands(act[..., 0:4], act[..., 4:8], act[..., 8:12])
        hopf_step(self.bank, dt)

        target = foot_target(self.bank.r, self.bank.theta, self.bank.phi, self.trajectory)
        # the trajectory is generated about the neutral foothold below each
        # hip; shift laterally into the hip frame the IK works in
        target[..., 1] += LIMB_SIDE_SIGN * self.geometry.hip_offset
        target, clamped = clamp_to_workspace(target, self.geometry)
        self.workspace_clamps += int(np.count_nonzero(clamped))
        q_cpg = leg_ik(target, self.geometry, strict=False)

        if res_rate is not None:
            rate = np.clip(np.asarray(res_rate, dtype=np.float64), -RES_RATE_LIMIT, RES_RATE_LIMIT)
            self.q_res = integrate_residual(self.q_res, rate.reshape(q_cpg.shape), dt)
        q_target = q_cpg + self.q_res
        tau = pd_torque(q, q_target, q_dot)
        return tau, q_target
