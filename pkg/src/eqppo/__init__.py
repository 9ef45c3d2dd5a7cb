"""PPO with equilibrium-relaxation networks for quadruped gait control."""

__version__ = "0.1.0"
