"""Command line entry point: ``safecrl run|curves|metrics|sweep-lambda``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError
from . import logs
from .config import ALGORITHMS, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("safecrl")


def _overrides(args):
    return {"output_dir": args.output, "seeds": args.seed, "algorithm": args.algorithm}


def cmd_run(args):
    from .experiment import run

    cfg = load_config(args.config, **_overrides(args))
    status, run_dir = run(cfg, jobs=args.jobs, curves=not args.no_curves)
    print(f"run {'ok' if status == 0 else 'FAILED'}: {run_dir}")
    if (run_dir / "metrics.txt").is_file():
        print((run_dir / "metrics.txt").read_text(), end="")
    return status


def cmd_curves(args):
    from .curves import emit_curves

    out = args.output or Path(args.runs[0]) / "curves"
    for p in emit_curves(args.runs, out):
        print(p)
    return EXIT_OK


def cmd_metrics(args):
    from .experiment import metrics_table, write_metrics

    summaries = {}
    for rd in args.runs:
        rd = Path(rd)
        seeds = [int(d.name.split("_", 1)[1]) for d in logs.seed_dirs(rd)]
        if not seeds:
            raise FileNotFoundError(f"{rd}: no seed_* directories")
        _, summary = write_metrics(rd, seeds)
        name = rd.name
        cfg_file = rd / "config.yaml"
        if cfg_file.is_file():
            name = load_config(cfg_file).algorithm
        if name in summaries:
            name = f"{name} ({rd.name})"
        summaries[name] = summary
    table = metrics_table(summaries)
    if args.output:
        Path(args.output).write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_sweep(args):
    from .sweep import DEFAULT_GRID, format_sweep, lambda_sweep, sweep_schedule, sweep_tasks

    cfg = load_config(args.config, **_overrides(args))
    rows = lambda_sweep(cfg, args.grid or DEFAULT_GRID, out_dir=cfg.output_dir,
                        eval_episodes=args.eval_episodes)
    print(format_sweep(rows, sweep_tasks(sweep_schedule(cfg))), end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="safecrl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def config_flags(sp):
        sp.add_argument("-c", "--config", required=True, help="experiment YAML file")
        sp.add_argument("-o", "--output", help="output directory (overrides output_dir)")
        sp.add_argument("-s", "--seed", type=int, action="append",
                        help="seed override; repeat for several")
        sp.add_argument("-a", "--algorithm", choices=ALGORITHMS, help="algorithm override")

    sp = sub.add_parser("run", help="train every seed and write logs, metrics and curves")
    config_flags(sp)
    sp.add_argument("-j", "--jobs", type=int, default=1, help="seeds run in parallel processes")
    sp.add_argument("--no-curves", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("curves", help="render figures and their CSVs from run directories")
    sp.add_argument("runs", nargs="+")
    sp.add_argument("-o", "--output", help="figure directory (default <first run>/curves)")
    sp.set_defaults(func=cmd_curves)

    sp = sub.add_parser("metrics", help="recompute metrics tables from run directories")
    sp.add_argument("runs", nargs="+")
    sp.add_argument("-o", "--output", help="also write the text table here")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("sweep-lambda", help="EWC strength sweep on a two-task sequence")
    config_flags(sp)
    sp.add_argument("-g", "--grid", type=float, nargs="+", help="lambda values")
    sp.add_argument("--eval-episodes", type=int, default=5)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
