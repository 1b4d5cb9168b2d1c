"""PointVel: a planar point mass driven by six fixed thrusters under a speed limit.

The thrusters point at 0, 60, ..., 300 degrees. Actions are per-thruster
commands in [-1, 1] (negative commands reverse the thrust). The ``back`` fault
disables every thruster whose direction has a negative x component, the
``front`` fault every thruster with a positive x component, so the two faults
need opposite command signs to keep moving along +x.

The observation is the velocity ``(vx, vy)``; position is tracked internally
(x is never observed, like the root position of a locomotion robot).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import CmdpSpec, Env, StepResult, TaskId

THRUSTER_ANGLES_DEG = (0.0, 60.0, 120.0, 180.0, 240.0, 300.0)


def thrust_matrix(gain=1.0):
    """The pristine 2x6 actuation matrix; column j is thruster j's unit direction times gain."""
    ang = np.deg2rad(np.array(THRUSTER_ANGLES_DEG))
    b = gain * np.stack([np.cos(ang), np.sin(ang)])
    b[np.abs(b) < 1e-12] = 0.0
    return b


def task_matrix(task, gain=1.0):
    b = thrust_matrix(gain)
    task = TaskId.parse(task)
    if task is TaskId.BACK:
        b[:, b[0] < 0] = 0.0
    elif task is TaskId.FRONT:
        b[:, b[0] > 0] = 0.0
    return b


@dataclass(frozen=True)
class PointVelConfig:
    dt: float = 0.05
    drag: float = 0.1
    v_max: float = 1.0
    ctrl_cost: float = 0.01
    thrust_gain: float = 1.0
    horizon: int = 200
    reset_noise: float = 0.01
    gamma: float = 0.99
    cost_limit: float = 25.0


class PointVel(Env):
    def __init__(self, config=None, seed=0):
        super().__init__(seed)
        self.config = config or PointVelConfig()
        c = self.config
        self.spec = CmdpSpec(obs_dim=2, action_dim=6, gamma=c.gamma, cost_limit=c.cost_limit,
                             horizon=c.horizon)
        self._pristine = thrust_matrix(c.thrust_gain)
        self.B = self._pristine.copy()
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)

    def apply_task(self, task):
        self.task = self._check_task(task)
        self.B = task_matrix(self.task, self.config.thrust_gain)

    def _reset_state(self):
        noise = self.config.reset_noise
        self.pos = self._rng.uniform(-noise, noise, size=2)
        self.vel = self._rng.uniform(-noise, noise, size=2)
        return self.vel.copy()

    def step(self, action):
        c = self.config
        u = self._clip(action)
        v_new = self.vel + (self.B @ u - c.drag * self.vel) * c.dt
        x_new = self.pos + v_new * c.dt
        reward = (x_new[0] - self.pos[0]) / c.dt - c.ctrl_cost * float(u @ u)
        cost = 1.0 if float(np.linalg.norm(v_new)) > c.v_max else 0.0
        self.vel, self.pos = v_new, x_new
        self.t += 1
        return StepResult(self.vel.copy(), float(reward), cost, False, self.t >= c.horizon)
