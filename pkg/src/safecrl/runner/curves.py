"""Learning-curve figures (SVG) with a sibling CSV holding exactly the plotted numbers."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import yaml

from ..metrics import aggregate_seeds
from . import logs

log = logging.getLogger(__name__)

CURVE_FIELDS = ["algorithm", "panel", "global_step", "mean", "std", "n_seeds"]
IMMEDIATE_FIELDS = ["algorithm", "visit", "mean", "std", "n_seeds"]
SEGMENT_FIELDS = ["segment", "task", "start", "stop"]
TASK_COLORS = {"nominal": "#ffffff", "back": "#dbe8f5", "front": "#f5e3d0"}


class CurveError(RuntimeError):
    """Raised before anything is written when run logs are missing or unreadable."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("cannot emit curves:\n" + "\n".join(f"  {p}" for p in self.problems))


def _inspect(run_dir):
    """Return ``(label, seed dirs, problems)`` for one run directory."""
    run_dir = Path(run_dir)
    problems = []
    if not run_dir.is_dir():
        return None, [], [f"{run_dir}: not a directory"]
    label = run_dir.name
    cfg_path = run_dir / "config.yaml"
    if cfg_path.is_file():
        with open(cfg_path) as fh:
            label = (yaml.safe_load(fh) or {}).get("algorithm", label)
    seeds = logs.seed_dirs(run_dir)
    if not seeds:
        problems.append(f"{run_dir}: no seed_* directories")
    for d in seeds:
        for name in ("log.csv", "episodes.csv"):
            if not (d / name).is_file():
                problems.append(f"{d / name}: missing")
    return label, seeds, problems


def band(series):
    """Cross-seed mean/std at every x. ``series`` is a list of ``{x: y}`` dicts."""
    xs = sorted({x for s in series for x in s})
    out = []
    for x in xs:
        vals = [s[x] for s in series if s.get(x) is not None]
        mean, std = aggregate_seeds(vals)
        if mean is not None:
            out.append((x, mean, std, len(vals)))
    return out


def _segments(rows):
    segs = []
    for r in rows:
        if not segs or segs[-1]["segment"] != r["segment"]:
            segs.append({"segment": r["segment"], "task": r["task"], "start": r["global_step"],
                         "stop": r["global_step"]})
        segs[-1]["stop"] = r["global_step"] + 1
    return segs


def collect_curves(run_dirs):
    """Load all runs; raises CurveError listing every missing file."""
    runs, problems = [], []
    labels = []
    for rd in run_dirs:
        label, seeds, probs = _inspect(rd)
        problems.extend(probs)
        if label is not None:
            if label in labels:
                label = f"{label} ({Path(rd).name})"
            labels.append(label)
            runs.append((label, seeds))
    if not run_dirs:
        problems.append("no run directories given")
    if problems:
        raise CurveError(problems)

    curves, immediate, segments = {}, {}, None
    for label, seeds in runs:
        rows_by_seed = [logs.load_log(d) for d in seeds]
        per_iter = 0
        for rows in rows_by_seed:
            if len(rows) > 1:
                per_iter = rows[1]["global_step"] - rows[0]["global_step"]
                break
        panels = {}
        for panel, key in (("reward", "mean_reward"), ("cost", "mean_cost")):
            # plot at the step count reached after the iteration
            panels[panel] = band([{r["global_step"] + per_iter: r[key] for r in rows}
                                  for rows in rows_by_seed])
        curves[label] = panels
        if segments is None and rows_by_seed and rows_by_seed[0]:
            segments = _segments(rows_by_seed[0])
            for s in segments:
                s["stop"] = s["stop"] - 1 + per_iter
        visit_series = []
        for d in seeds:
            vals = {v.visit: v.immediate for v in logs.load_visits(d) if v.task == "nominal"}
            visit_series.append(vals)
        immediate[label] = band(visit_series)
    return curves, immediate, segments or []


def _shade(ax, segments):
    for s in segments:
        ax.axvspan(s["start"], s["stop"], color=TASK_COLORS.get(s["task"], "#eeeeee"), lw=0,
                   zorder=0)
        ax.axvline(s["start"], color="#999999", lw=0.5, zorder=1)


def _plot_band(ax, pts, label):
    x = np.array([p[0] for p in pts], dtype=float)
    m = np.array([p[1] for p in pts], dtype=float)
    line, = ax.plot(x, m, lw=1.2, label=label)
    if pts and all(p[2] is not None for p in pts):
        s = np.array([p[2] for p in pts], dtype=float)
        ax.fill_between(x, m - s, m + s, color=line.get_color(), alpha=0.25, lw=0)


def emit_curves(run_dirs, out_dir, cost_limit=None):
    """Write ``training_curves.svg/.csv``, ``immediate_nominal.svg/.csv``, ``segments.csv``.

    Returns the list of written paths. Nothing is written if any input is missing.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if isinstance(run_dirs, (str, Path)):
        run_dirs = [run_dirs]
    curves, immediate, segments = collect_curves([Path(r) for r in run_dirs])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plt.rcParams["svg.hashsalt"] = "safecrl"
    plt.rcParams["svg.fonttype"] = "none"
    written = []

    rows = [{"algorithm": a, "panel": p, "global_step": x, "mean": m, "std": s, "n_seeds": n}
            for a, panels in curves.items() for p, pts in panels.items() for x, m, s, n in pts]
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for ax, panel in zip(axes, ("reward", "cost")):
        _shade(ax, segments)
        for a, panels in curves.items():
            _plot_band(ax, panels[panel], a)
        ax.set_ylabel(f"episodic {panel}")
    if cost_limit is not None:
        rows.append({"algorithm": "", "panel": "cost_limit", "global_step": None,
                     "mean": float(cost_limit), "std": None, "n_seeds": None})
        axes[1].axhline(cost_limit, color="k", ls="--", lw=0.8, label="cost limit")
    top = axes[0]
    for s in segments:
        top.annotate(s["task"], xy=((s["start"] + s["stop"]) / 2, 1.0),
                     xycoords=("data", "axes fraction"), ha="center", va="bottom", fontsize=7)
    axes[1].set_xlabel("environment steps")
    axes[0].legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    written += _save(fig, out / "training_curves.svg", CURVE_FIELDS, rows, plt)

    rows = [{"algorithm": a, "visit": v + 1, "mean": m, "std": s, "n_seeds": n}
            for a, pts in immediate.items() for v, m, s, n in pts]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for a, pts in immediate.items():
        x = [p[0] + 1 for p in pts]
        m = [p[1] for p in pts]
        if pts and all(p[2] is not None for p in pts):
            ax.errorbar(x, m, yerr=[p[2] for p in pts], marker="o", capsize=3, label=a)
        else:
            ax.plot(x, m, marker="o", label=a)
    ax.set_xlabel("nominal visit")
    ax.set_ylabel("immediate reward")
    ax.legend(fontsize=8)
    fig.tight_layout()
    written += _save(fig, out / "immediate_nominal.svg", IMMEDIATE_FIELDS, rows, plt)

    logs.write_csv(out / "segments.csv", SEGMENT_FIELDS, segments)
    written.append(out / "segments.csv")
    return written


def _save(fig, path, fields, rows, plt):
    tmp = path.with_name(path.stem + ".tmp.svg")
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    tmp.replace(path)
    csv_path = path.with_suffix(".csv")
    logs.write_csv(csv_path, fields, rows)
    return [path, csv_path]
