"""EWC strength sweep: train on a two-task sequence per lambda, then evaluate on both tasks."""
from __future__ import annotations

import logging
from pathlib import Path

from ..envs import TaskId, TaskSchedule, make_env
from ..errors import ConfigError
from ..metrics import aggregate_seeds, fmt_mean_std
from . import logs
from .experiment import evaluate, run_seed

log = logging.getLogger(__name__)

DEFAULT_GRID = (0.5, 1.0, 5.0, 10.0, 25.0, 100.0)


def sweep_fields(tasks):
    out = ["lam"]
    for t in tasks:
        out += [f"{t.label}_{k}" for k in ("reward_mean", "reward_std", "cost_mean", "cost_std")]
    return out + ["n_seeds"]


def dedupe_grid(grid):
    out = []
    for lam in grid:
        lam = float(lam)
        if lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {lam}")
        if lam in out:
            log.warning("duplicate lambda %g in grid; ignored", lam)
            continue
        out.append(lam)
    if not out:
        raise ConfigError("lambda grid is empty")
    return out


def sweep_schedule(cfg):
    """The config's schedule if it already has two distinct tasks, else nominal then back."""
    segs = cfg.schedule.segments
    if len(segs) == 2 and segs[0][0] != segs[1][0]:
        return cfg.schedule
    budget = segs[0][1]
    log.info("lambda sweep uses [nominal, back] with %d steps per segment", budget)
    return TaskSchedule((("nominal", budget), ("back", budget)))


def sweep_tasks(schedule):
    tasks = []
    for t, _ in schedule.segments:
        if t not in tasks:
            tasks.append(t)
    return tasks


def lambda_sweep(cfg, grid=DEFAULT_GRID, out_dir=None, eval_episodes=5):
    """One row per lambda with per-task reward and cost; writes CSV and text if ``out_dir``."""
    if cfg.algorithm not in ("ppo_ewc", "safe_ewc"):
        raise ConfigError(f"lambda sweep needs an EWC agent, got {cfg.algorithm!r}")
    grid = dedupe_grid(grid)
    schedule = sweep_schedule(cfg)
    tasks = sweep_tasks(schedule)
    rows = []
    for lam in grid:
        run_cfg = cfg.replace(ewc={**cfg.to_dict()["ewc"], "lam": lam},
                              schedule=schedule.to_list())
        results = {t: ([], []) for t in tasks}
        for seed in run_cfg.seeds:
            res = run_seed(run_cfg, seed)
            env = make_env(run_cfg.environment, run_cfg.env, seed=seed)
            env.reset(seed=seed)
            for t in tasks:
                r, c = evaluate(res.learner.policy, env, t, episodes=eval_episodes)
                results[t][0].append(r)
                results[t][1].append(c)
        row = {"lam": lam, "n_seeds": len(run_cfg.seeds)}
        for t in tasks:
            row[f"{t.label}_reward_mean"], row[f"{t.label}_reward_std"] = aggregate_seeds(results[t][0])
            row[f"{t.label}_cost_mean"], row[f"{t.label}_cost_std"] = aggregate_seeds(results[t][1])
        rows.append(row)
        log.info("lambda %g done", lam)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        logs.write_csv(out / "lambda_sweep.csv", sweep_fields(tasks), rows)
        (out / "lambda_sweep.txt").write_text(format_sweep(rows, tasks))
    return rows


def format_sweep(rows, tasks):
    """One row per lambda, reward and cost columns per evaluated task."""
    labels = [TaskId.parse(t).label for t in tasks]
    head = ["lambda"] + [f"{t} {k}" for t in labels for k in ("reward", "cost")]
    body = []
    for r in rows:
        line = [f"{r['lam']:g}"]
        for t in labels:
            line.append(fmt_mean_std(r[f"{t}_reward_mean"], r[f"{t}_reward_std"]))
            line.append(fmt_mean_std(r[f"{t}_cost_mean"], r[f"{t}_cost_std"]))
        body.append(line)
    widths = [max(len(x[i]) for x in [head, *body]) for i in range(len(head))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [head, *body]]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
