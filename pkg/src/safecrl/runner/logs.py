"""CSV schemas of a run directory and their readers/writers.

Layout::

    <run>/config.yaml, manifest.json
    <run>/seed_<s>/log.csv           one row per training iteration
    <run>/seed_<s>/episodes.csv      one row per completed training episode
    <run>/seed_<s>/visit_costs.csv   summed step costs per iteration, keyed by visit
    <run>/metrics.csv, metrics_summary.csv, metrics.txt

Floats are written with ``repr`` so a reload reproduces them bit for bit.
"""
from __future__ import annotations

import csv
import os
from pathlib import Path

from ..metrics import METRICS, VisitLog, aggregate_seeds, task_metrics

SCHEMA_VERSION = 1

LOG_FIELDS = ["seed", "global_step", "segment", "task", "visit", "iteration", "episodes",
              "mean_reward", "mean_cost", "eval_reward", "eval_cost", "kl", "case",
              "clip_fraction", "ewc_penalty", "ewc_nominal", "ewc_back", "ewc_front",
              "snapshots", "accepted"]
EPISODE_FIELDS = ["seed", "task", "visit", "segment", "iteration", "worker", "reward", "cost",
                  "length"]
VISIT_COST_FIELDS = ["seed", "task", "visit", "segment", "iteration", "cost_sum", "steps"]
METRIC_FIELDS = ["seed", "task", *METRICS]
SUMMARY_FIELDS = ["metric", "task", "mean", "std", "n_seeds"]

SCHEMAS = {
    "log.csv": LOG_FIELDS,
    "episodes.csv": EPISODE_FIELDS,
    "visit_costs.csv": VISIT_COST_FIELDS,
    "metrics.csv": METRIC_FIELDS,
    "metrics_summary.csv": SUMMARY_FIELDS,
}


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, fields, rows):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_cell(row.get(f)) for f in fields])
    os.replace(tmp, path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(text):
    if text == "" or text is None:
        return None
    return float(text)


def seed_dirs(run_dir):
    return sorted((p for p in Path(run_dir).glob("seed_*") if p.is_dir()),
                  key=lambda p: int(p.name.split("_", 1)[1]))


def load_visits(seed_dir):
    """Rebuild a seed's VisitLogs from its episode and cost CSVs."""
    visits = {}
    for row in read_csv(Path(seed_dir) / "visit_costs.csv"):
        key = (row["task"], int(row["visit"]))
        v = visits.setdefault(key, VisitLog(row["task"], int(row["visit"])))
        v.costs.append(float(row["cost_sum"]))
        v.n_steps += int(row["steps"])
    for row in read_csv(Path(seed_dir) / "episodes.csv"):
        key = (row["task"], int(row["visit"]))
        v = visits.setdefault(key, VisitLog(row["task"], int(row["visit"])))
        v.episode_rewards.append(float(row["reward"]))
        v.episode_workers.append(int(row["worker"]))
    return [visits[k] for k in sorted(visits, key=lambda k: (k[0], k[1]))]


def load_log(seed_dir):
    rows = read_csv(Path(seed_dir) / "log.csv")
    for r in rows:
        for k in ("seed", "global_step", "segment", "visit", "iteration", "episodes", "snapshots"):
            r[k] = int(r[k])
        for k in ("mean_reward", "mean_cost", "eval_reward", "eval_cost", "kl", "clip_fraction",
                  "ewc_penalty", "ewc_nominal", "ewc_back", "ewc_front"):
            r[k] = _num(r[k])
    return rows


def metric_rows(seed, visits):
    rows = []
    for task, vals in task_metrics(visits).items():
        rows.append({"seed": seed, "task": task, **vals})
    return rows


def summarize(rows):
    """``{task: {metric: (mean, std, n)}}`` across seeds."""
    by_task = {}
    for r in rows:
        by_task.setdefault(r["task"], []).append(r)
    out = {}
    for task, rs in by_task.items():
        out[task] = {}
        for m in METRICS:
            vals = [r[m] for r in rs if r[m] is not None]
            mean, std = aggregate_seeds(vals)
            out[task][m] = (mean, std, len(vals))
    return out


def summary_rows(summary):
    rows = []
    for task in sorted(summary):
        for m in METRICS:
            mean, std, n = summary[task][m]
            rows.append({"metric": m, "task": task, "mean": mean, "std": std, "n_seeds": n})
    return rows


def read_metrics(run_dir):
    rows = read_csv(Path(run_dir) / "metrics.csv")
    for r in rows:
        r["seed"] = int(r["seed"])
        for m in METRICS:
            r[m] = _num(r[m])
    return rows
