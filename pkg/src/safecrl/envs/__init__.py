from .base import (CmdpSpec, Env, StepResult, TaskId, TaskSchedule, default_schedule,
                   schedule_advance, schedule_segment)
from .gridcrawl import MOVES, GridCrawl, GridCrawlConfig, TabularModel, enabled_moves
from .oracle import OracleResult, evaluate_policy, solve_gridcrawl_oracle, value_iteration
from .pointvel import PointVel, PointVelConfig, task_matrix, thrust_matrix

ENV_FAMILIES = {"gridcrawl": (GridCrawl, GridCrawlConfig), "pointvel": (PointVel, PointVelConfig)}


def make_env(name, config=None, seed=0):
    from ..errors import ConfigError

    try:
        cls, cfg_cls = ENV_FAMILIES[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; expected one of {sorted(ENV_FAMILIES)}") from None
    return cls(config or cfg_cls(), seed=seed)


__all__ = [
    "CmdpSpec", "Env", "StepResult", "TaskId", "TaskSchedule", "default_schedule",
    "schedule_advance", "schedule_segment", "MOVES", "GridCrawl", "GridCrawlConfig",
    "TabularModel", "enabled_moves", "OracleResult", "evaluate_policy",
    "solve_gridcrawl_oracle", "value_iteration", "PointVel", "PointVelConfig",
    "task_matrix", "thrust_matrix", "ENV_FAMILIES", "make_env",
]
