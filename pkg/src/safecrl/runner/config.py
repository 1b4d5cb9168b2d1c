"""Experiment configuration: a single YAML file that travels with the run's artifacts.

Schema (every key optional except where noted)::

    algorithm: ppo | ppo_ewc | safe_ewc | cpo        # required
    environment: gridcrawl | pointvel                # required
    env: {...}                # GridCrawlConfig / PointVelConfig fields
    schedule:                 # either a list of {task, steps} ...
      - {task: nominal, steps: 50000}
    # ... or {segment_steps: 50000, tasks: [nominal, back, ...]};
    # omitted -> eight-segment default with the family's segment budget
    seeds: [0, 1, 2, 3, 4]
    workers: 10
    steps_per_worker: 100     # per iteration; defaults to the env horizon
    hidden: [64, 64]
    init_log_std: 0.0
    eval_every: 1             # evaluation episodes (mean action) every N iterations; 0 = off
    ppo: {clip, epochs, minibatch, lr, critic_lr, entropy_coef, gamma, gae_lambda}
    ewc: {lam, fisher_episodes}
    shaping: {beta, enabled}
    cpo: {delta, cg_iters, cg_tol, backtrack, max_backtracks, damping,
          critic_lr, critic_epochs, minibatch, gae_lambda}
    output_dir: runs/example
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from ..cpo import CpoConfig
from ..envs import ENV_FAMILIES, TaskSchedule, default_schedule
from ..errors import ConfigError
from ..ppo_ewc import EwcConfig, PpoConfig, ShapingConfig

ALGORITHMS = ("ppo", "ppo_ewc", "safe_ewc", "cpo")
DEFAULT_SEGMENT_STEPS = {"gridcrawl": 50_000, "pointvel": 200_000}


@dataclass
class ExperimentConfig:
    algorithm: str
    environment: str
    schedule: TaskSchedule
    env: object
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    workers: int = 10
    steps_per_worker: int = 100
    hidden: tuple = (64, 64)
    init_log_std: float = 0.0
    eval_every: int = 1
    ppo: PpoConfig = field(default_factory=PpoConfig)
    ewc: EwcConfig = field(default_factory=EwcConfig)
    shaping: ShapingConfig = field(default_factory=ShapingConfig)
    cpo: CpoConfig = field(default_factory=CpoConfig)
    output_dir: str = "runs/experiment"

    @property
    def steps_per_iteration(self):
        return self.workers * self.steps_per_worker

    @property
    def uses_ewc(self):
        return self.algorithm in ("ppo_ewc", "safe_ewc")

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "environment": self.environment,
            "env": dataclasses.asdict(self.env),
            "schedule": self.schedule.to_list(),
            "seeds": list(self.seeds),
            "workers": self.workers,
            "steps_per_worker": self.steps_per_worker,
            "hidden": list(self.hidden),
            "init_log_std": self.init_log_std,
            "eval_every": self.eval_every,
            "ppo": dataclasses.asdict(self.ppo),
            "ewc": dataclasses.asdict(self.ewc),
            "shaping": dataclasses.asdict(self.shaping),
            "cpo": dataclasses.asdict(self.cpo),
            "output_dir": self.output_dir,
        }

    def config_hash(self):
        body = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(_plain(self.to_dict()), fh, sort_keys=False)

    def replace(self, **changes):
        raw = {**self.to_dict(), **changes}
        if "algorithm" in changes:
            raw["shaping"] = {k: v for k, v in raw["shaping"].items() if k != "enabled"}
            if changes["algorithm"] == "ppo":
                raw["ewc"] = {**raw["ewc"], "lam": 0.0}
        return from_dict(raw)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, raw, name):
    raw = dict(raw or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    for f in dataclasses.fields(cls):
        if f.name in raw and isinstance(f.default, tuple):
            raw[f.name] = tuple(raw[f.name])
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}' section: {exc}") from exc


def _schedule(raw, environment):
    seg = DEFAULT_SEGMENT_STEPS[environment]
    if raw is None:
        return default_schedule(seg)
    if isinstance(raw, dict):
        seg = int(raw.get("segment_steps", seg))
        tasks = raw.get("tasks")
        if tasks is None:
            return default_schedule(seg)
        return TaskSchedule(tuple((t, seg) for t in tasks))
    return TaskSchedule.from_list(raw)


def from_dict(raw):
    raw = copy.deepcopy(dict(raw))
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    algorithm = raw.get("algorithm")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    environment = raw.get("environment")
    if environment not in ENV_FAMILIES:
        raise ConfigError(f"environment must be one of {sorted(ENV_FAMILIES)}, got {environment!r}")
    _, env_cls = ENV_FAMILIES[environment]
    env_cfg = _build(env_cls, raw.get("env"), "env")
    schedule = _schedule(raw.get("schedule"), environment)

    ewc_raw = dict(raw.get("ewc") or {})
    shaping_raw = dict(raw.get("shaping") or {})
    if algorithm == "ppo":
        if ewc_raw.get("lam", 0.0) != 0.0:
            raise ConfigError("algorithm 'ppo' requires ewc.lam = 0")
        ewc_raw["lam"] = 0.0
    want_shaping = algorithm == "safe_ewc"
    if "enabled" in shaping_raw and bool(shaping_raw["enabled"]) != want_shaping:
        raise ConfigError(f"algorithm '{algorithm}' requires shaping.enabled = {want_shaping}")
    shaping_raw["enabled"] = want_shaping

    ppo_raw = dict(raw.get("ppo") or {})
    ppo_raw.setdefault("gamma", env_cfg.gamma)
    cpo_raw = dict(raw.get("cpo") or {})
    if "cost_limit" in cpo_raw and cpo_raw["cost_limit"] != env_cfg.cost_limit:
        raise ConfigError("set the cost limit once, under env.cost_limit")
    cpo_raw["cost_limit"] = env_cfg.cost_limit
    cpo_raw.setdefault("gamma", env_cfg.gamma)

    seeds = raw.get("seeds", [0, 1, 2, 3, 4])
    if isinstance(seeds, int):
        seeds = [seeds]
    cfg = ExperimentConfig(
        algorithm=algorithm,
        environment=environment,
        schedule=schedule,
        env=env_cfg,
        seeds=[int(s) for s in seeds],
        workers=int(raw.get("workers", 10)),
        steps_per_worker=int(raw.get("steps_per_worker", env_cfg.horizon)),
        hidden=tuple(int(h) for h in raw.get("hidden", (64, 64))),
        init_log_std=float(raw.get("init_log_std", 0.0)),
        eval_every=int(raw.get("eval_every", 1)),
        ppo=_build(PpoConfig, ppo_raw, "ppo"),
        ewc=_build(EwcConfig, ewc_raw, "ewc"),
        shaping=_build(ShapingConfig, shaping_raw, "shaping"),
        cpo=_build(CpoConfig, cpo_raw, "cpo"),
        output_dir=str(raw.get("output_dir", "runs/experiment")),
    )
    validate(cfg)
    return cfg


def validate(cfg):
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("seeds must be distinct")
    if cfg.workers < 1 or cfg.steps_per_worker < 1:
        raise ConfigError("workers and steps_per_worker must be positive")
    per_iter = cfg.steps_per_iteration
    for task, budget in cfg.schedule.segments:
        if budget % per_iter:
            raise ConfigError(f"segment budget {budget} ({task}) is not a multiple of "
                              f"workers x steps_per_worker = {per_iter}")
    if cfg.algorithm == "ppo" and cfg.ewc.lam != 0:
        raise ConfigError("algorithm 'ppo' requires ewc.lam = 0")
    if cfg.shaping.enabled != (cfg.algorithm == "safe_ewc"):
        raise ConfigError("reward shaping is enabled exactly for safe_ewc")


def load_config(path, **overrides):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    algorithm = overrides.pop("algorithm", None)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    cfg = from_dict(raw)
    if algorithm is not None and algorithm != cfg.algorithm:
        cfg = cfg.replace(algorithm=algorithm)
    return cfg
