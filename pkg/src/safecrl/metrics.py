"""Continual-learning metrics over task visits, and cross-seed aggregation.

A visit is one contiguous segment of training on a task. Rewards of
parallel workers are kept per worker: the *immediate* reward of a visit is the
mean over workers of each worker's first completed episode, the *final*
reward the mean of each worker's last completed episode.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MIN_ABS_FINAL = 1e-9
METRICS = ("total_cost", "forget_percentage", "final_task_reward")
METRIC_TITLES = {
    "total_cost": "Total Cost (lower is better)",
    "forget_percentage": "Task Forget Percentage (%) (lower is better)",
    "final_task_reward": "Final Task Reward (higher is better)",
}


@dataclass
class VisitLog:
    task: str
    visit: int
    episode_rewards: list = field(default_factory=list)
    episode_workers: list = field(default_factory=list)
    costs: list = field(default_factory=list)  # summed step costs, one entry per iteration
    n_steps: int = 0

    def __post_init__(self):
        if not self.episode_workers:
            self.episode_workers = [0] * len(self.episode_rewards)
        if len(self.episode_workers) != len(self.episode_rewards):
            raise ValueError("every episode reward needs a worker id")

    def _per_worker(self, pick):
        by_worker = {}
        for w, r in zip(self.episode_workers, self.episode_rewards):
            by_worker.setdefault(w, []).append(r)
        if not by_worker:
            return None
        return float(np.mean([pick(rs) for _, rs in sorted(by_worker.items())]))

    @property
    def immediate(self):
        return self._per_worker(lambda rs: rs[0])

    @property
    def final(self):
        return self._per_worker(lambda rs: rs[-1])


def total_cost(visits):
    """Every step cost summed across all visits of one task, divided by the visit count."""
    if not visits:
        raise ValueError("total_cost needs at least one visit")
    costs = [c for v in visits for c in v.costs]
    if not costs:
        log.warning("task %s has an empty cost series", visits[0].task)
        return 0.0
    return math.fsum(costs) / len(visits)


def forget_percentage(visits):
    """Mean over consecutive visit pairs of ``100 * (final_prev - immediate_next) / |final_prev|``.

    Negative values mean the agent came back better than it left. Pairs whose
    previous final reward is (numerically) zero are excluded. Returns ``None``
    when no pair is usable.
    """
    terms = []
    for prev, nxt in zip(visits[:-1], visits[1:]):
        fin, imm = prev.final, nxt.immediate
        if fin is None or imm is None:
            log.warning("visit pair %d->%d of %s lacks a completed episode", prev.visit,
                        nxt.visit, prev.task)
            continue
        if abs(fin) < MIN_ABS_FINAL:
            log.warning("excluding pair %d->%d of %s: final reward is zero", prev.visit,
                        nxt.visit, prev.task)
            continue
        terms.append((fin - imm) / abs(fin))
    if not terms:
        return None
    return 100.0 * math.fsum(terms) / len(terms)


def final_task_reward(visits):
    """Final episodic reward of the last visit; ``None`` if it has no completed episode."""
    if not visits:
        raise ValueError("final_task_reward needs at least one visit")
    fin = visits[-1].final
    if fin is None:
        log.warning("last visit of %s has no completed episode", visits[-1].task)
    return fin


def aggregate_seeds(values):
    """Sample mean and sample (n-1) standard deviation; std is ``None`` for one value."""
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return None, None
    mean = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var)


def group_visits(visits):
    """``{task: [visits ordered by visit index]}``."""
    out = {}
    for v in sorted(visits, key=lambda v: (v.task, v.visit)):
        out.setdefault(v.task, []).append(v)
    return out


def task_metrics(visits):
    """``{task: {metric: value}}`` for one seed's visit logs."""
    out = {}
    for task, vs in group_visits(visits).items():
        out[task] = {
            "total_cost": total_cost(vs),
            "forget_percentage": forget_percentage(vs),
            "final_task_reward": final_task_reward(vs),
        }
    return out


def fmt_mean_std(mean, std, digits=1):
    if mean is None:
        return "n/a"
    m = f"{mean:.{digits}f}"
    if float(m) == 0.0:
        m = m.lstrip("-")  # tiny negatives would otherwise print as -0.0
    if std is None:
        return m
    return f"{m} ± {std:.{digits}f}"


def format_table(summary, tasks):
    """Plain-text table: one block per metric, one row per agent, one column per task.

    ``summary`` maps ``agent -> task -> metric -> (mean, std)``.
    """
    agents = list(summary)
    cells = [["Agent", *tasks]]
    blocks = []
    for metric in METRICS:
        rows = []
        for agent in agents:
            row = [agent]
            for task in tasks:
                mean, std = summary[agent].get(task, {}).get(metric, (None, None))
                row.append(fmt_mean_std(mean, std))
            rows.append(row)
        blocks.append((METRIC_TITLES[metric], rows))
        cells.extend(rows)
    widths = [max(len(r[i]) for r in cells) for i in range(len(tasks) + 1)]
    total = sum(widths) + 3 * len(tasks)

    def line(row):
        return " | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()

    out = [line(cells[0]), "-" * total]
    for title, rows in blocks:
        out.append(title.center(total).rstrip())
        out.append("-" * total)
        out.extend(line(r) for r in rows)
        out.append("-" * total)
    return "\n".join(out) + "\n"
