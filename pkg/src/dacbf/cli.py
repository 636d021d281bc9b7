"""Command-line entry points: single runs and delay sweeps.

Exit codes: 0 when everything ran (and no asserting mode violated
safety), 2 when an asserting mode logged a safety violation, 1 on
configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config_io import load_config
from .errors import DacbfError
from .runner import MODES, export, run, sweep

_ASSERTING_MODES = ("dacbf_baseline", "proposed", "delay_free")


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.mode is not None:
        config = dataclasses.replace(config, mode=args.mode)
    if args.delay is not None:
        config = dataclasses.replace(config, true_delay=args.delay)
    trace = run(config)
    if args.out is not None:
        export(trace, args.out)
    s = trace.summary
    print(f"mode={s['mode']} D={s['true_delay']:g} avg_h={s['avg_h']:.6g} "
          f"min_h={s['min_h']:.6g} infeasible={s['infeasible_steps']} "
          f"final_interval=[{s['final_lo']:.6g}, {s['final_hi']:.6g}]")
    if config.mode in _ASSERTING_MODES and s["safety_violation"]:
        print("SAFETY VIOLATION: min h below tolerance", file=sys.stderr)
        return 2
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    delays = [float(v) for v in args.delays.split(",") if v.strip()]
    modes = tuple(v.strip() for v in args.modes.split(",") if v.strip())
    for m in modes:
        if m not in MODES:
            raise DacbfError(f"unknown mode {m!r}")
    result = sweep(config, delays, modes=modes, out=args.out, jobs=args.jobs)
    print(result["table"], end="")
    rc = 0
    for (mode, delay), cell in result["cells"].items():
        if "error" in cell:
            print(f"cell ({mode}, D={delay:g}) failed: {cell['error']}",
                  file=sys.stderr)
            rc = max(rc, 1)
        elif mode in _ASSERTING_MODES and cell["safety_violation"]:
            print(f"cell ({mode}, D={delay:g}) violated safety", file=sys.stderr)
            rc = max(rc, 2)
    return rc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dacbf",
        description="Delay-adaptive barrier-filtered truck-following simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one closed-loop run")
    p_run.add_argument("--config", required=True, help="TOML run configuration")
    p_run.add_argument("--mode", choices=MODES, default=None,
                       help="override the configured mode")
    p_run.add_argument("--delay", type=float, default=None,
                       help="override the configured true delay")
    p_run.add_argument("--out", default=None, help="directory for CSV trace output")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a (mode x delay) comparison grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--delays", required=True,
                         help="comma-separated delays, e.g. 0.1,0.2,0.3,0.4,0.5")
    p_sweep.add_argument("--modes", default="dacbf_baseline,proposed")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.set_defaults(func=_cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DacbfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
