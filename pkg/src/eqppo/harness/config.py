"""Training configuration: every loop hyperparameter in one serializable
dataclass, with a laptop-scale profile and the full-scale profile."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

import yaml

from ..errors import ConfigError
from ..nudging import ClipConfig

TASKS = ("velocity", "quadruped")
ALGOS = ("ep", "bp")
PROFILES = ("desk", "paper")


@dataclass
class TrainerConfig:
    """All knobs of the nudged-relaxation PPO trainer.

    Defaults are the desk profile on the velocity task: small nets and
    sample budgets that train in minutes on a laptop.  ``paper`` swaps in
    the full-scale locomotion values (runnable, not used by the tests).
    """

    # run setup
    task: str = "velocity"
    algo: str = "ep"                      # "ep" or the backprop baseline "bp"
    stage: int = 1
    seed: int = 0
    n_envs: int = 16                      # N
    rollout_len: int = 128                # T
    max_training_samples: int = 200_000
    cpg_checkpoint: str | None = None     # required when stage == 2
    h_max: float | None = None            # terrain difficulty (quadruped task)

    # discounting
    gamma: float = 0.99
    lam: float = 0.95

    # epochs and minibatching
    k_epoch: int = 10
    n_minibatches: int = 4

    # KL control (thresholds are multiples of kl_target)
    kl_target: float = 0.01
    kl_stop_mult: float = 2.0             # early-stop policy epochs
    kl_rollback_mult: float = 4.0         # restore snapshot
    kl_grow_mult: float = 0.5             # raise the LR below this
    kappa: float = 1.5

    # learning rates
    eta_policy_initial: float = 0.1
    eta_policy_lower: float = 1e-6
    eta_policy_upper: float = 10.0
    eta_value: float = 0.1
    eta_logstd: float = 3e-4
    momentum: float = 0.9

    # entropy regularisation of log sigma; None targets the unit-sigma
    # entropy 0.5 * D * ln(2 pi e) for the task's action dimension
    k_entropy: float = 0.01
    entropy_target: float | None = None

    # relaxation protocol
    beta_ep: float = 0.1
    eps_ep: float = 1.0                   # state update coefficient
    policy_steps: tuple[int, int, int] = (30, 20, 10)   # free / +nudge / -nudge
    value_steps: tuple[int, int, int] = (25, 15, 10)
    relax_early_exit: bool = False        # fixed step counts by default

    # ratio gate
    epsilon: float = 0.2
    epsilon_rev: float = 0.7
    sigma_scaling: str = "inv_sigma"
    mask_mode: str = "dynamic"

    # network
    alpha_w: float = 0.5
    hidden_sizes: tuple[int, ...] = (32, 32)
    idct_dim: int | None = 32             # None trains on raw normalized obs

    def clip_config(self) -> ClipConfig:
        return ClipConfig(epsilon=self.epsilon, epsilon_rev=self.epsilon_rev,
                          sigma_scaling=self.sigma_scaling, mask_mode=self.mask_mode,
                          beta_ep=self.beta_ep).validate()

    # ------------------------------------------------------------------
    # profiles
    # ------------------------------------------------------------------

    @classmethod
    def desk(cls, **overrides) -> "TrainerConfig":
        if overrides.get("task") == "quadruped" and "idct_dim" not in overrides:
            overrides["idct_dim"] = 128
        return cls(**overrides).validate()

    @classmethod
    def paper(cls, stage: int = 1, **overrides) -> "TrainerConfig":
        base = dict(task="quadruped", stage=stage,
                    n_envs=1024 if stage == 1 else 2048,
                    rollout_len=256 if stage == 1 else 128,
                    max_training_samples=100_000_000,
                    hidden_sizes=(768, 768), idct_dim=1024)
        base.update(overrides)
        return cls(**base).validate()

    @classmethod
    def from_profile(cls, profile: str, **overrides) -> "TrainerConfig":
        if profile == "desk":
            return cls.desk(**overrides)
        if profile == "paper":
            return cls.paper(**overrides)
        raise ConfigError(f"unknown profile {profile!r}; choose from {PROFILES}")

    # ------------------------------------------------------------------
    # validation and serialization
    # ------------------------------------------------------------------

    def validate(self) -> "TrainerConfig":
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.algo not in ALGOS:
            raise ConfigError(f"unknown algo {self.algo!r}; choose from {ALGOS}")
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.stage == 2 and self.task == "quadruped" and not self.cpg_checkpoint:
            raise ConfigError("stage 2 requires cpg_checkpoint (a trained stage-1 bundle)")
        if self.n_envs < 1 or self.rollout_len < 1:
            raise ConfigError("n_envs and rollout_len must be positive")
        if self.max_training_samples < self.n_envs * self.rollout_len:
            raise ConfigError("max_training_samples is below one rollout")
        if not 0.0 < self.gamma <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"gamma/lam out of range: {self.gamma}, {self.lam}")
        if self.k_epoch < 1 or self.n_minibatches < 1:
            raise ConfigError("k_epoch and n_minibatches must be positive")
        if self.kl_target <= 0 or self.kappa <= 1.0:
            raise ConfigError("kl_target must be positive and kappa > 1")
        if not (0 < self.kl_grow_mult < self.kl_stop_mult <= self.kl_rollback_mult):
            raise ConfigError("need kl_grow_mult < kl_stop_mult <= kl_rollback_mult")
        if not 0 < self.eta_policy_lower <= self.eta_policy_initial <= self.eta_policy_upper:
            raise ConfigError("policy learning rate outside its bounds")
        if min(self.eta_value, self.eta_logstd) <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.eps_ep <= 0 or self.alpha_w <= 0:
            raise ConfigError("eps_ep and alpha_w must be positive")
        if len(self.policy_steps) != 3 or len(self.value_steps) != 3 \
                or min(*self.policy_steps, *self.value_steps) < 1:
            raise ConfigError("relaxation step counts must be three positive ints")
        if any(h < 1 for h in self.hidden_sizes) or not self.hidden_sizes:
            raise ConfigError("hidden_sizes must be non-empty positive ints")
        if self.idct_dim is not None:
            raw_dim = {"velocity": 4, "quadruped": 63 if self.stage == 1 else 87}[self.task]
            if self.idct_dim < raw_dim:
                raise ConfigError(
                    f"idct_dim {self.idct_dim} is below the {raw_dim}-dim "
                    f"observation of task {self.task!r} stage {self.stage}")
        self.clip_config()
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["policy_steps"] = list(self.policy_steps)
        d["value_steps"] = list(self.value_steps)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("policy_steps", "value_steps", "hidden_sizes"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d).validate()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str) -> "TrainerConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a key-value mapping")
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_yaml())

    @classmethod
    def load(cls, path) -> "TrainerConfig":
        with open(path) as fh:
            return cls.from_yaml(fh.read())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_yaml().encode()).hexdigest()[:16]

    def with_overrides(self, **overrides) -> "TrainerConfig":
        return dataclasses.replace(self, **overrides).validate()
