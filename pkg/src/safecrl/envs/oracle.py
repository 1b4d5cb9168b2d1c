"""Exact constrained optimum of a GridCrawl task via occupancy-measure linear programming.

The episodic problem (fixed horizon H, undiscounted by default) is unrolled
over time: one occupancy variable ``x[t, s, a]`` per step, cell and available
gait. Flow conservation ties consecutive steps together, the episode cost
``sum C * x`` is bounded by ``d``, and ``sum R * x`` is maximised. The optimal
Markov policy is ``x[t, s, a] / sum_a x[t, s, a]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .base import TaskId
from .gridcrawl import GridCrawl

MAX_ORACLE_STATES = 200


@dataclass
class OracleResult:
    feasible: bool
    value: float
    cost: float
    policy: np.ndarray | None  # (H, S, M) action probabilities
    message: str = ""


def solve_cmdp_lp(model, horizon, cost_limit, discount=1.0):
    n_s, n_m = model.n_states, model.n_moves
    moves = np.flatnonzero(model.enabled)
    k = len(moves)
    n_var = horizon * n_s * k

    def idx(t, s, j):
        return (t * n_s + s) * k + j

    rows, cols, vals = [], [], []
    rhs = np.zeros(horizon * n_s)
    rhs[model.start] = 1.0
    for t in range(horizon):
        for s in range(n_s):
            row = t * n_s + s
            for j in range(k):
                rows.append(row)
                cols.append(idx(t, s, j))
                vals.append(1.0)
        if t + 1 < horizon:
            for s in range(n_s):
                for j, a in enumerate(moves):
                    rows.append((t + 1) * n_s + model.next_state[s, a])
                    cols.append(idx(t, s, j))
                    vals.append(-1.0)
    a_eq = sparse.csr_matrix((vals, (rows, cols)), shape=(horizon * n_s, n_var))

    disc = discount ** np.arange(horizon)
    r_vec = (disc[:, None, None] * model.reward[None, :, moves]).ravel()
    c_vec = (disc[:, None, None] * model.cost[None, :, moves]).ravel()
    a_ub = b_ub = None
    if np.isfinite(cost_limit):
        a_ub = sparse.csr_matrix(c_vec[None, :])
        b_ub = np.array([cost_limit])

    res = linprog(-r_vec, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=rhs,
                  bounds=(0, None), method="highs")
    if res.status == 2:
        return OracleResult(False, float("nan"), float("nan"), None,
                            f"infeasible: no policy keeps expected episode cost <= {cost_limit}")
    if res.status != 0:
        raise RuntimeError(f"linear program failed: {res.message}")
    x = np.clip(res.x, 0.0, None).reshape(horizon, n_s, k)
    mass = x.sum(axis=2, keepdims=True)
    probs_k = np.where(mass > 1e-12, x / np.where(mass > 0, mass, 1.0), 1.0 / k)
    policy = np.zeros((horizon, n_s, n_m))
    policy[:, :, moves] = probs_k
    return OracleResult(True, float(r_vec @ res.x), float(c_vec @ res.x), policy, "optimal")


def solve_gridcrawl_oracle(env_or_config, task=TaskId.NOMINAL, cost_limit=None, discount=1.0):
    """Best expected episode return over policies whose expected episode cost is <= d.

    ``cost_limit`` defaults to the environment's own limit; pass ``np.inf`` for
    the unconstrained optimum.
    """
    env = env_or_config if isinstance(env_or_config, GridCrawl) else GridCrawl(env_or_config)
    if env.n_states > MAX_ORACLE_STATES:
        raise ValueError(f"grid has {env.n_states} cells; the exact oracle handles at most "
                         f"{MAX_ORACLE_STATES}")
    d = env.spec.cost_limit if cost_limit is None else cost_limit
    model = env.tabular_model(task)
    return solve_cmdp_lp(model, env.config.horizon, d, discount)


def value_iteration(model, horizon, discount=1.0):
    """Unconstrained finite-horizon optimum by backward induction from the start cell."""
    v = np.zeros(model.n_states)
    moves = np.flatnonzero(model.enabled)
    for _ in range(horizon):
        q = model.reward[:, moves] + discount * v[model.next_state[:, moves]]
        v = q.max(axis=1)
    return float(v[model.start])


def evaluate_policy(model, policy, horizon, discount=1.0):
    """Exact expected ``(return, cost)`` of a Markov policy.

    ``policy`` is ``(S, M)`` for a stationary policy or ``(H, S, M)``.
    """
    dist = np.zeros(model.n_states)
    dist[model.start] = 1.0
    ret = cost = 0.0
    for t in range(horizon):
        pi = policy[t] if policy.ndim == 3 else policy
        pi = pi * model.enabled
        flow = dist[:, None] * pi
        ret += discount ** t * float(np.sum(flow * model.reward))
        cost += discount ** t * float(np.sum(flow * model.cost))
        new = np.zeros(model.n_states)
        np.add.at(new, model.next_state.ravel(), flow.ravel())
        dist = new
    return ret, cost
