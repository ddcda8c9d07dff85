"""Command-line entry point: ``bpinn <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields

from .diagnostics import RateInfeasibleError, RateInputs, rate_report
from .experiment import (
    WORKERS_ENV,
    ConfigError,
    erm_baseline,
    export_boxplot_data,
    parse_config,
    run_experiment,
    serialize_config,
    validate_config,
)

_RATE_TYPES = {f.name: f.type for f in fields(RateInputs)}


def _load(path):
    cfg = validate_config(path)
    if isinstance(cfg, list):
        for err in cfg:
            print(f"{path}: {err}", file=sys.stderr)
        return None
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return 2
    root, results = run_experiment(cfg, output_dir=args.output)
    failed = [r for r in results if r.status != "completed"]
    for r in failed:
        print(f"noise={r.noise_level}% n={r.n} mode={r.mode} rep={r.replicate}: {r.message}", file=sys.stderr)
    print(root / "aggregate.csv")
    return 1 if failed else 0


def _cmd_validate(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return 2
    sys.stdout.write(serialize_config(cfg))
    return 0


def _cmd_boxplots(args) -> int:
    print(export_boxplot_data(args.result_dir, args.output))
    return 0


def _parse_rate_params(pairs) -> RateInputs:
    kw = {}
    for item in pairs:
        key, sep, val = item.partition("=")
        if not sep or key not in _RATE_TYPES:
            raise ValueError(f"expected key=value with key in {sorted(_RATE_TYPES)}, got {item!r}")
        kw[key] = int(val) if key in ("tau", "n", "q", "m") else float(val)
    return RateInputs(**kw)


def _cmd_rate(args) -> int:
    try:
        rep = rate_report(_parse_rate_params(args.params))
    except RateInfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(asdict(rep), indent=2))
    return 0


def _cmd_erm(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return 2
    path, slopes = erm_baseline(cfg, args.output, args.replicates)
    print(path)
    for lv, slope in slopes.items():
        print(f"noise={lv}%: log-log slope of mean squared L2 error vs n = {slope:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bpinn",
        description="Bayesian PINN sweeps for the inverse heat problem.",
        epilog=f"Set {WORKERS_ENV} to run chains in parallel processes.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a sweep")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="override run.output_dir")
    r.set_defaults(fn=_cmd_run)

    v = sub.add_parser("validate", help="check a config and print it fully resolved")
    v.add_argument("config")
    v.set_defaults(fn=_cmd_validate)

    b = sub.add_parser("export-boxplots", help="write boxplot statistics for a result directory")
    b.add_argument("result_dir")
    b.add_argument("-o", "--output")
    b.set_defaults(fn=_cmd_boxplots)

    rr = sub.add_parser("rate-report", help="sparsity level, radius and rates from key=value inputs")
    rr.add_argument("params", nargs="+", metavar="key=value")
    rr.set_defaults(fn=_cmd_rate)

    e = sub.add_parser("erm-baseline", help="least-squares θ fits over a config's grid")
    e.add_argument("config")
    e.add_argument("-o", "--output")
    e.add_argument("--replicates", type=int)
    e.set_defaults(fn=_cmd_erm)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
