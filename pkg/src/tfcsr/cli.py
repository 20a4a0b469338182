"""Command-line entry point: ``tfcsr run | compare | sweep``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import bench
from .config import apply_override, config_from_dict, load_raw, parse_assignment
from .errors import ConfigError, TFCSRError
from .strategies import METHODS

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_SWEEP = 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", action="append", metavar="PATH",
                   help="YAML run config (compare accepts several)")
    p.add_argument("--seed", type=int, help="master seed (default 42)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--method", choices=METHODS, help="override strategy.method")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. strategy.lr=0.01")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfcsr", description="Continual-learning benchmark harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one method over the task sequence")
    _common(run)
    run.add_argument("--dump-buffer", action="store_true", help="write buffer.json snapshots after each task")

    cmp_ = sub.add_parser("compare", help="run several methods on one protocol")
    _common(cmp_)
    cmp_.add_argument("--methods", metavar="LIST", help="comma-separated methods applied to the first config")

    sw = sub.add_parser("sweep", help="vary buffer capacity or mastery threshold")
    _common(sw)
    sw.add_argument("--param", required=True, choices=sorted(bench.SWEEP_PARAMS))
    sw.add_argument("--values", required=True, metavar="LIST", help="comma-separated, strictly increasing")
    sw.add_argument("--jobs", type=int, default=1, help="parallel sub-runs")
    return parser


def _raw_config(path: Optional[str], args) -> dict:
    raw = load_raw(path)
    for item in args.set:
        key, val = parse_assignment(item)
        raw = apply_override(raw, key, val)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    if args.method is not None:
        raw = apply_override(raw, "strategy.method", args.method)
    return raw


def _cmd_run(args) -> int:
    paths = args.config or [None]
    if len(paths) > 1:
        raise ConfigError("run takes a single --config")
    cfg = config_from_dict(_raw_config(paths[0], args))
    summary = bench.execute_run(cfg, dump_buffer=args.dump_buffer)
    print(json.dumps({k: summary[k] for k in ("method", "final_accuracy", "replay_batches_total",
                                              "memory_checks_total", "per_task_epochs")}))
    return 0


def _cmd_compare(args) -> int:
    paths = args.config or [None]
    raws = [_raw_config(p, args) for p in paths]
    if args.methods:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        raws = [apply_override(raws[0], "strategy.method", m) for m in methods] + raws[1:]
    configs = [config_from_dict(r) for r in raws]
    out = args.out or configs[0].out
    summaries = bench.compare(configs, out)
    sys.stdout.write((Path(out) / "compare.md").read_text(encoding="utf-8"))
    return 0 if all(s["status"] == "ok" for s in summaries) else EXIT_NUMERIC


def _cmd_sweep(args) -> int:
    paths = args.config or [None]
    if len(paths) > 1:
        raise ConfigError("sweep takes a single --config")
    base = config_from_dict(_raw_config(paths[0], args))
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad --values {args.values!r}") from None
    rows, failures = bench.sweep(base, args.param, values, base.out, jobs=args.jobs)
    for v, acc, checks in rows:
        print(f"{args.param}={v:g}\t" + ("FAILED" if acc is None else f"{acc:.2f}\t{checks}"))
    return EXIT_SWEEP if failures else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "compare": _cmd_compare, "sweep": _cmd_sweep}[args.command]
    try:
        return handler(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"tfcsr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"tfcsr: numeric failure: {exc} (partial outputs flagged in summary.json)", file=sys.stderr)
        return EXIT_NUMERIC
    except TFCSRError as exc:
        print(f"tfcsr: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
