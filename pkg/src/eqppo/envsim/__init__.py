"""Reduced-order locomotion environments and evaluation protocols."""

from .core import StepResult
from .quadruped import (ACTION_DIM, DT_RL, EVAL_FIXED, FALL_ANGLE,
                        MAX_EPISODE_STEPS, OBS_DIM_CPG, OBS_DIM_RES,
                        QuadrupedEnv, SurrogateParams)
from .rewards import STAGE_CONSTANTS, closeness_r1, closeness_r2, reward_terms
from .terrain import MIN_HEIGHT, SIDE_BOUNDS, TerrainField, generate_terrain
from .velocity import VelocityTrackEnv
from .walking import (H_MAX_GRID, METRIC_COLUMNS, V_TARGET_GRID,
                      ScriptedGaitPolicy, WalkingMetrics, required_distance,
                      walking_test)

__all__ = [
    "ACTION_DIM", "DT_RL", "EVAL_FIXED", "FALL_ANGLE", "H_MAX_GRID",
    "MAX_EPISODE_STEPS", "METRIC_COLUMNS", "MIN_HEIGHT", "OBS_DIM_CPG", "OBS_DIM_RES",
    "QuadrupedEnv", "STAGE_CONSTANTS", "SIDE_BOUNDS", "ScriptedGaitPolicy",
    "StepResult", "SurrogateParams", "TerrainField", "V_TARGET_GRID",
    "VelocityTrackEnv", "WalkingMetrics", "closeness_r1", "closeness_r2",
    "generate_terrain", "required_distance", "reward_terms", "walking_test",
]
