"""GridCrawl: a tabular crawler on a small wrap-around grid with hazard rows.

Five gaits move the agent: ``stride`` (both leg pairs), ``push`` (rear legs),
``pull`` (front legs), ``up`` and ``down``. Cells in hazard rows are downhill:
forward gaits that use the rear legs gain one extra cell there, but landing in
a hazard cell costs 1. Faults remove gaits: ``back`` loses stride and push,
``front`` loses stride and pull.

The continuous action is a preference score per gait; the executed gait is the
highest-scoring one still available under the active task, so removed gaits
never execute.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import CmdpSpec, Env, StepResult, TaskId

MOVES = ("stride", "push", "pull", "up", "down")
STRIDE, PUSH, PULL, UP, DOWN = range(5)

# cells advanced per gait in a regular row and in a hazard (downhill) row
PROGRESS = {"safe": (2, 1, 1, 0, 0), "hazard": (3, 2, 1, 0, 0)}

REMOVED = {
    TaskId.NOMINAL: (),
    TaskId.BACK: (STRIDE, PUSH),
    TaskId.FRONT: (STRIDE, PULL),
}


def enabled_moves(task):
    removed = REMOVED[TaskId.parse(task)]
    return np.array([m not in removed for m in range(len(MOVES))])


@dataclass(frozen=True)
class GridCrawlConfig:
    rows: int = 2
    cols: int = 10
    hazard_rows: tuple = (1,)
    start: tuple = (0, 0)
    wrap: bool = True
    horizon: int = 100
    gamma: float = 0.99
    cost_limit: float = 25.0
    action_bound: float = 10.0


@dataclass
class TabularModel:
    """Deterministic transition table of one task: ``next_state[s, m]`` etc."""

    next_state: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    enabled: np.ndarray
    start: int

    @property
    def n_states(self):
        return self.next_state.shape[0]

    @property
    def n_moves(self):
        return self.next_state.shape[1]


class GridCrawl(Env):
    def __init__(self, config=None, seed=0):
        super().__init__(seed)
        self.config = config or GridCrawlConfig()
        c = self.config
        self.spec = CmdpSpec(obs_dim=c.rows + 2, action_dim=len(MOVES), gamma=c.gamma,
                             cost_limit=c.cost_limit, horizon=c.horizon,
                             action_low=-c.action_bound, action_high=c.action_bound)
        self.hazard = np.zeros((c.rows, c.cols), dtype=bool)
        for r in c.hazard_rows:
            self.hazard[r, :] = True
        self.enabled = enabled_moves(TaskId.NOMINAL)
        self.cell = tuple(c.start)
        self.last_move = None

    @property
    def n_states(self):
        return self.config.rows * self.config.cols

    def state_index(self, cell):
        return cell[0] * self.config.cols + cell[1]

    def cell_of(self, index):
        return divmod(int(index), self.config.cols)

    def features(self, cell):
        c = self.config
        obs = np.zeros(c.rows + 2)
        obs[cell[0]] = 1.0
        ang = 2.0 * np.pi * cell[1] / c.cols
        obs[c.rows] = np.sin(ang)
        obs[c.rows + 1] = np.cos(ang)
        return obs

    def all_features(self):
        """Observation of every cell, indexed by state index."""
        return np.stack([self.features(self.cell_of(s)) for s in range(self.n_states)])

    def transition(self, cell, move):
        """Pure table lookup: ``(next cell, reward, cost)`` for one gait."""
        c = self.config
        r, col = cell
        kind = "hazard" if self.hazard[r, col] else "safe"
        progress = PROGRESS[kind][move]
        if move == UP:
            r = max(r - 1, 0)
        elif move == DOWN:
            r = min(r + 1, c.rows - 1)
        if c.wrap:
            new_col = (col + progress) % c.cols
        else:
            new_col = min(col + progress, c.cols - 1)
            progress = new_col - col
        cost = 1.0 if self.hazard[r, new_col] else 0.0
        return (r, new_col), float(progress), cost

    def tabular_model(self, task=TaskId.NOMINAL):
        n, m = self.n_states, len(MOVES)
        nxt = np.zeros((n, m), dtype=int)
        rew = np.zeros((n, m))
        cost = np.zeros((n, m))
        for s in range(n):
            for a in range(m):
                cell, rew[s, a], cost[s, a] = self.transition(self.cell_of(s), a)
                nxt[s, a] = self.state_index(cell)
        return TabularModel(nxt, rew, cost, enabled_moves(task), self.state_index(self.config.start))

    def apply_task(self, task):
        self.task = self._check_task(task)
        self.enabled = enabled_moves(self.task)

    def select_move(self, action):
        prefs = np.where(self.enabled, action, -np.inf)
        return int(np.argmax(prefs))

    def _reset_state(self):
        self.cell = tuple(self.config.start)
        self.last_move = None
        return self.features(self.cell)

    def step(self, action):
        return self.step_move(self.select_move(self._clip(action)))

    def step_move(self, move):
        if not self.enabled[move]:
            raise ValueError(f"gait {MOVES[move]} is removed under task {self.task}")
        self.cell, reward, cost = self.transition(self.cell, move)
        self.last_move = move
        self.t += 1
        return StepResult(self.features(self.cell), reward, cost, False,
                          self.t >= self.config.horizon)
