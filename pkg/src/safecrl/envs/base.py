"""Task ids, task schedules and the common environment interface."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ExperimentComplete


class TaskId(enum.IntEnum):
    """Operating regime of the plant: intact, or with a rear/front fault."""

    NOMINAL = 0
    BACK = 1
    FRONT = 2

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            try:
                return cls(int(value))
            except ValueError:
                pass
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ConfigError(f"unknown task id {value!r}; expected one of "
                              f"{[t.label for t in cls]}") from None

    def __str__(self):
        return self.label


@dataclass(frozen=True)
class CmdpSpec:
    obs_dim: int
    action_dim: int
    gamma: float
    cost_limit: float
    horizon: int
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.cost_limit < 0:
            raise ConfigError("cost limit must be >= 0")


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    cost: float
    terminated: bool
    truncated: bool


class Env:
    """Minimal single-instance environment protocol shared by the built-ins."""

    spec: CmdpSpec
    tasks = tuple(TaskId)

    def __init__(self, seed=0):
        self.task = TaskId.NOMINAL
        self.clip_count = 0
        self._seed = seed
        self._rng = np.random.default_rng(seed)
        self.episode_count = 0
        self.t = 0

    def reset(self, seed=None):
        if seed is not None:
            self._seed = seed
            self._rng = np.random.default_rng(seed)
            self.episode_count = 0
        self.t = 0
        self.episode_count += 1
        return self._reset_state()

    def _clip(self, action):
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        clipped = np.clip(action, self.spec.action_low, self.spec.action_high)
        if not np.array_equal(clipped, action):
            self.clip_count += 1
        return clipped

    def _check_task(self, task):
        task = TaskId.parse(task)
        if task not in self.tasks:
            raise ConfigError(f"task {task} not available for {type(self).__name__}")
        return task


@dataclass(frozen=True)
class TaskSchedule:
    """Ordered ``(task, step budget)`` segments of a non-stationary experiment."""

    segments: tuple

    def __post_init__(self):
        segs = tuple((TaskId.parse(t), int(b)) for t, b in self.segments)
        if not segs:
            raise ConfigError("schedule needs at least one segment")
        if any(b <= 0 for _, b in segs):
            raise ConfigError("segment budgets must be positive")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def from_list(cls, items):
        out = []
        for item in items:
            if isinstance(item, dict):
                out.append((item["task"], item["steps"]))
            else:
                out.append(tuple(item))
        return cls(tuple(out))

    def to_list(self):
        return [{"task": t.label, "steps": b} for t, b in self.segments]

    @property
    def total(self):
        return sum(b for _, b in self.segments)

    @property
    def boundaries(self):
        return list(np.cumsum([0] + [b for _, b in self.segments]))

    def __len__(self):
        return len(self.segments)

    def visit_index(self, segment):
        """0-based count of earlier segments with the same task."""
        task = self.segments[segment][0]
        return sum(1 for t, _ in self.segments[:segment] if t == task)


def schedule_segment(schedule, global_step):
    if global_step < 0:
        raise ConfigError("global step must be non-negative")
    if global_step >= schedule.total:
        raise ExperimentComplete(f"step {global_step} is beyond the budget {schedule.total}")
    start = 0
    for i, (_, budget) in enumerate(schedule.segments):
        if global_step < start + budget:
            return i, start
        start += budget
    raise AssertionError("unreachable")


def schedule_advance(schedule, global_step):
    """Return ``(active task, boundary crossed)`` for a global environment step."""
    i, start = schedule_segment(schedule, global_step)
    return schedule.segments[i][0], global_step == start


def default_schedule(segment_steps):
    """Eight segments: nominal four times (first and last), back and front twice each."""
    order = ["nominal", "back", "nominal", "front", "nominal", "back", "front", "nominal"]
    return TaskSchedule(tuple((t, segment_steps) for t in order))
