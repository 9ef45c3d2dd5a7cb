"""Shared vectorized-environment step container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class StepResult:
    """One vectorized step.

    ``obs`` already contains fresh-episode observations for rows that were
    auto-reset this step; ``terminal_obs`` always holds the true next
    observation of the episode that just advanced, which is what value
    bootstrapping at timeouts must use.
    """

    obs: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    fall: np.ndarray
    terminal_obs: np.ndarray
    info: dict = field(default_factory=dict)
