"""Walking-test evaluation grids and report writing.

Runs the distance-in-budget walking protocol over the velocity-target ×
terrain-height grid and writes one CSV row per cell.  Policies come either
from a trained checkpoint bundle (deterministic mean actions through the
stored observation pipeline) or from the scripted gait generator used as a
fixed reference controller.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from ..envsim import (H_MAX_GRID, METRIC_COLUMNS, OBS_DIM_CPG, V_TARGET_GRID,
                      ScriptedGaitPolicy, walking_test)
from .agents import agent_from_bundle
from .checkpoint import load_bundle


class CheckpointPolicy:
    """Deterministic mean-action policy reconstructed from a bundle."""

    def __init__(self, path: str):
        self.agent, self.config = agent_from_bundle(load_bundle(path))

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return self.agent.policy_mu(self.agent.process(obs[:, :OBS_DIM_CPG]))


class CheckpointResidualPolicy(CheckpointPolicy):
    """Residual-rate head for stage-2 bundles (sees the full observation)."""

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return self.agent.policy_mu(self.agent.process(obs))


def walking_grid(policy_for_target, episodes: int = 100, seed: int = 0,
                 v_targets=V_TARGET_GRID, h_maxes=H_MAX_GRID,
                 res_policy_for_target=None, params=None) -> list:
    """Run the walking test over the full grid.

    ``policy_for_target`` maps a target speed to a gait policy so scripted
    controllers can retune per cell; checkpoint policies just ignore the
    argument.  Returns WalkingMetrics rows in grid order.
    """
    rows = []
    for v_target in v_targets:
        policy = policy_for_target(v_target)
        res_policy = (res_policy_for_target(v_target)
                      if res_policy_for_target is not None else None)
        for h_max in h_maxes:
            rows.append(walking_test(policy, v_target, h_max, episodes=episodes,
                                     seed=seed, res_policy=res_policy, params=params))
    return rows


def write_report(rows: list, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_row())


def evaluate_command(checkpoint: str | None, episodes: int, seed: int,
                     out_path: str, scripted: bool = False) -> list:
    """CLI entry point: build the policy source and write the grid report."""
    if scripted or checkpoint is None:
        policy_for_target = lambda v: ScriptedGaitPolicy(v)  # noqa: E731
    else:
        policy = CheckpointPolicy(checkpoint)
        policy_for_target = lambda v: policy  # noqa: E731
    rows = walking_grid(policy_for_target, episodes=episodes, seed=seed)
    write_report(rows, out_path)
    return rows
