"""Run one experiment config: every seed over the task schedule, then metrics and manifest."""
from __future__ import annotations

import json
import logging
import multiprocessing
import time
import traceback
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..cpo import CpoLearner
from ..envs import TaskId, make_env, schedule_advance
from ..metrics import VisitLog, format_table
from ..numcore import make_policy, make_value_net, policy_mean
from ..ppo_ewc import PpoLearner
from ..rollout import WorkerPool, collect
from . import logs

log = logging.getLogger(__name__)


def seed_streams(seed, workers):
    """Independent RNG streams of one seed: init, rollout, update, eval, env seeds."""
    ss = np.random.SeedSequence(seed)
    init, rollout, update, evals = (np.random.default_rng(s) for s in ss.spawn(4))
    env_seeds = np.random.SeedSequence([seed, 7]).generate_state(workers + 1).tolist()
    return init, rollout, update, evals, env_seeds


def build_learner(cfg, obs_dim, action_dim, rng):
    policy = make_policy(obs_dim, action_dim, rng, hidden=cfg.hidden, init_log_std=cfg.init_log_std)
    critic = make_value_net(obs_dim, rng, hidden=cfg.hidden)
    if cfg.algorithm == "cpo":
        cost_critic = make_value_net(obs_dim, rng, hidden=cfg.hidden)
        return CpoLearner(policy, critic, cost_critic, cfg.cpo)
    return PpoLearner(policy, critic, cfg.ppo, cfg.ewc, cfg.shaping, use_ewc=cfg.uses_ewc)


def evaluate(policy, env, task, episodes=1):
    """Mean-action episodes on ``task``; returns mean ``(reward, cost)``."""
    env.apply_task(task)
    rewards, costs = [], []
    for _ in range(episodes):
        obs = env.reset()
        total_r = total_c = 0.0
        while True:
            res = env.step(policy_mean(policy, obs))
            total_r += res.reward
            total_c += res.cost
            obs = res.obs
            if res.terminated or res.truncated:
                break
        rewards.append(total_r)
        costs.append(total_c)
    return float(np.mean(rewards)), float(np.mean(costs))


@dataclass
class SeedResult:
    seed: int
    rows: list = field(default_factory=list)
    episodes: list = field(default_factory=list)
    visit_costs: list = field(default_factory=list)
    visits: list = field(default_factory=list)
    snapshots_taken: int = 0
    final_theta: np.ndarray = None
    learner: object = None
    eval_env: object = None


def run_seed(cfg, seed):
    """Train one seed through the whole schedule; nothing is written to disk."""
    init_rng, roll_rng, upd_rng, _, env_seeds = seed_streams(seed, cfg.workers)
    envs = [make_env(cfg.environment, cfg.env) for _ in range(cfg.workers)]
    pool = WorkerPool(envs, env_seeds[:cfg.workers])
    eval_env = make_env(cfg.environment, cfg.env, seed=env_seeds[-1])
    eval_env.reset(seed=env_seeds[-1])
    learner = build_learner(cfg, pool.spec.obs_dim, pool.spec.action_dim, init_rng)
    schedule = cfg.schedule
    res = SeedResult(seed)
    visits = {}
    window = deque(maxlen=cfg.ewc.fisher_episodes)
    global_step = 0
    iteration = 0
    segment = -1
    for seg_index, (task, budget) in enumerate(schedule.segments):
        for _ in range(budget // cfg.steps_per_iteration):
            active, crossed = schedule_advance(schedule, global_step)
            if crossed:
                if segment >= 0 and learner.end_segment(schedule.segments[segment][0], segment,
                                                        list(window)):
                    res.snapshots_taken += 1
                segment = seg_index
                window.clear()
                pool.apply_task(active)
            visit = schedule.visit_index(segment)
            key = (active.label, visit)
            vlog = visits.setdefault(key, VisitLog(active.label, visit))

            batch = collect(learner.policy, pool, cfg.steps_per_worker, roll_rng, *learner.critics())
            done = batch.completed
            for e in done:
                window.append((batch.obs[e.worker, e.start:e.stop],
                               batch.actions[e.worker, e.start:e.stop]))
                vlog.episode_rewards.append(e.reward)
                vlog.episode_workers.append(e.worker)
                res.episodes.append({"seed": seed, "task": active.label, "visit": visit,
                                     "segment": segment, "iteration": iteration,
                                     "worker": e.worker, "reward": e.reward, "cost": e.cost,
                                     "length": e.length})
            cost_sum = float(batch.costs.sum())
            vlog.costs.append(cost_sum)
            vlog.n_steps += len(batch)
            res.visit_costs.append({"seed": seed, "task": active.label, "visit": visit,
                                    "segment": segment, "iteration": iteration,
                                    "cost_sum": cost_sum, "steps": len(batch)})

            diag = learner.update(batch, upd_rng)
            eval_r = eval_c = None
            if cfg.eval_every and iteration % cfg.eval_every == 0:
                eval_r, eval_c = evaluate(learner.policy, eval_env, active)
            ewc = diag.get("ewc_by_task", {})
            res.rows.append({
                "seed": seed, "global_step": global_step, "segment": segment,
                "task": active.label, "visit": visit, "iteration": iteration,
                "episodes": len(done),
                "mean_reward": float(np.mean([e.reward for e in done])) if done else None,
                "mean_cost": float(np.mean([e.cost for e in done])) if done else None,
                "eval_reward": eval_r, "eval_cost": eval_c,
                "kl": diag.get("kl", diag.get("approx_kl")),
                "case": diag.get("case", ""),
                "clip_fraction": diag.get("clip_fraction"),
                "ewc_penalty": diag.get("ewc_penalty") if learner.uses_ewc else None,
                "ewc_nominal": ewc.get("nominal"), "ewc_back": ewc.get("back"),
                "ewc_front": ewc.get("front"),
                "snapshots": len(learner.store) if learner.uses_ewc else 0,
                "accepted": diag.get("accepted", not diag.get("rolled_back", False)),
            })
            global_step += len(batch)
            iteration += 1
    res.visits = [visits[k] for k in sorted(visits)]
    res.final_theta = learner.policy.flat
    res.learner = learner
    res.eval_env = eval_env
    return res


def write_seed(run_dir, res):
    d = Path(run_dir) / f"seed_{res.seed}"
    d.mkdir(parents=True, exist_ok=True)
    logs.write_csv(d / "log.csv", logs.LOG_FIELDS, res.rows)
    logs.write_csv(d / "episodes.csv", logs.EPISODE_FIELDS, res.episodes)
    logs.write_csv(d / "visit_costs.csv", logs.VISIT_COST_FIELDS, res.visit_costs)
    return d


def _seed_job(args):
    cfg, seed, run_dir = args
    t0 = time.time()
    try:
        res = run_seed(cfg, seed)
        write_seed(run_dir, res)
        return {"seed": seed, "status": "ok", "seconds": round(time.time() - t0, 2),
                "snapshots": res.snapshots_taken}
    except Exception as exc:  # one failing seed must not take the others down
        log.error("seed %d failed: %s", seed, exc)
        return {"seed": seed, "status": "failed", "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc()}


def write_metrics(run_dir, seeds):
    """Recompute metrics from the persisted logs of ``seeds`` and write the tables."""
    run_dir = Path(run_dir)
    rows = []
    for s in seeds:
        rows.extend(logs.metric_rows(s, logs.load_visits(run_dir / f"seed_{s}")))
    rows.sort(key=lambda r: (r["seed"], r["task"]))
    logs.write_csv(run_dir / "metrics.csv", logs.METRIC_FIELDS, rows)
    summary = logs.summarize(rows)
    logs.write_csv(run_dir / "metrics_summary.csv", logs.SUMMARY_FIELDS, logs.summary_rows(summary))
    return rows, summary


def metrics_table(summaries, tasks=None):
    """Aligned text table from ``{agent: summarize(...)}``."""
    if tasks is None:
        tasks = [t.label for t in TaskId if any(t.label in s for s in summaries.values())]
    trimmed = {a: {t: {m: v[:2] for m, v in s[t].items()} for t in s} for a, s in summaries.items()}
    return format_table(trimmed, tasks)


def run(cfg, jobs=1, curves=True):
    """Run all seeds of ``cfg`` into ``cfg.output_dir``. Returns ``(exit_status, run_dir)``."""
    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(run_dir / "config.yaml")
    jobs_args = [(cfg, s, str(run_dir)) for s in cfg.seeds]
    if jobs > 1 and len(cfg.seeds) > 1:
        with multiprocessing.get_context("spawn").Pool(min(jobs, len(cfg.seeds))) as p:
            statuses = p.map(_seed_job, jobs_args)
    else:
        statuses = [_seed_job(a) for a in jobs_args]
    ok = [s["seed"] for s in statuses if s["status"] == "ok"]
    if ok:
        _, summary = write_metrics(run_dir, ok)
        (run_dir / "metrics.txt").write_text(metrics_table({cfg.algorithm: summary}))
        if curves:
            from .curves import emit_curves
            emit_curves([run_dir], run_dir / "curves", cost_limit=cfg.env.cost_limit)
    manifest = {
        "library": "safecrl",
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "algorithm": cfg.algorithm,
        "environment": cfg.environment,
        "csv_schema_version": logs.SCHEMA_VERSION,
        "csv_schemas": logs.SCHEMAS,
        "seeds": statuses,
        "status": "ok" if len(ok) == len(cfg.seeds) else "failed",
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return (0 if manifest["status"] == "ok" else 2), run_dir
