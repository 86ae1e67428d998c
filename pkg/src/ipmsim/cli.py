"""Command-line entry point.

Verbs: ``run`` (simulate from a config), ``preset <name>`` (canned
experiments with pass/fail summaries), ``describe`` (inspect a checkpoint),
``validate-config``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance-criterion failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ConfigError, parse_config
from .presets import PRESET_NAMES, run_preset, write_atomic
from .stepper import CSV_HEADER, CheckpointError, checkpoint, read_checkpoint_header, run_simulation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4


def _add_common(parser):
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted-path config override (repeatable), e.g. stepper.dt=0.002",
    )
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--quiet", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ipmsim",
        description="Free-boundary porous-media flow simulator",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run a simulation from a config")
    _add_common(p_run)

    p_preset = sub.add_parser("preset", help="run a named experiment preset")
    p_preset.add_argument("name", choices=PRESET_NAMES)
    _add_common(p_preset)

    p_desc = sub.add_parser("describe", help="summarize a checkpoint file")
    p_desc.add_argument("checkpoint", help="path to a checkpoint file")

    p_val = sub.add_parser("validate-config", help="validate a config and echo it")
    _add_common(p_val)
    return parser


def _cmd_run(args) -> int:
    try:
        config = parse_config(args.config, args.override)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or os.path.join("runs", "run")
    os.makedirs(out_dir, exist_ok=True)
    write_atomic(os.path.join(out_dir, "config.echo.json"), config.to_json())
    try:
        ctx, control, f0, g0, t_end, interval = config.build_context()
        result = run_simulation(ctx, control, f0, g0, t_end, interval)
    except Exception as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    csv = CSV_HEADER + "\n" + "\n".join(r.to_csv() for r in result.rows) + "\n"
    write_atomic(os.path.join(out_dir, "diagnostics.csv"), csv)
    summary = {
        "status": result.status,
        "steps_accepted": result.steps_accepted,
        "steps_rejected": result.steps_rejected,
        "tangency_max_relative": result.tangency_max_relative,
        "final": {
            "t": result.rows[-1].t,
            "Hs_f": result.rows[-1].Hs_f,
            "Hs_g": result.rows[-1].Hs_g,
            "taylor_min": result.rows[-1].taylor_min,
        },
        "config_hash": config.config_hash(),
    }
    write_atomic(
        os.path.join(out_dir, "summary.json"),
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
    )
    if config.raw["output"]["checkpoints"]:
        blob = checkpoint(result.state, config.config_hash(),
                          s_index=ctx.s_index)
        write_atomic(os.path.join(out_dir, "final.ckpt"), blob)
    if not args.quiet:
        print(f"run: {result.status}; wrote {out_dir}/diagnostics.csv "
              f"({len(result.rows)} rows)")
    return EXIT_OK if result.status == "ok" else EXIT_NUMERICAL


def _cmd_preset(args) -> int:
    try:
        return run_preset(args.name, args.override, args.out, args.quiet)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _cmd_describe(args) -> int:
    try:
        with open(args.checkpoint, "rb") as fh:
            blob = fh.read()
        import hashlib

        if len(blob) < 32 or hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
            raise CheckpointError("checkpoint corrupted (sha256 mismatch)")
        header = read_checkpoint_header(blob[:-32])
    except FileNotFoundError:
        print(f"no such file: {args.checkpoint}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CheckpointError as exc:
        print(f"bad checkpoint: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    diag = header["diagnostics"]
    print(f"checkpoint: t = {header['t']:.6g}")
    print(f"  grid: {header['n_x']} x {header['n_z']}, L = {header['L']:.6g}, "
          f"z_bot = {header['z_bot']:.6g}, delta = {header['delta']:.6g}")
    print(f"  Hs_f = {diag['Hs_f']:.9g}, Hs_g = {diag['Hs_g']:.9g}")
    print(f"  taylor_min = {diag['taylor_min']:.9g}, "
          f"separation_min = {diag['separation_min']:.9g}, "
          f"mean_f = {diag['mean_f']:.9g}")
    print(f"  config hash: {header['config_hash'] or '(none)'}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        config = parse_config(args.config, args.override)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    print(config.to_json())
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "run":
        code = _cmd_run(args)
    elif args.verb == "preset":
        code = _cmd_preset(args)
    elif args.verb == "describe":
        code = _cmd_describe(args)
    else:
        code = _cmd_validate(args)
    return code


if __name__ == "__main__":
    sys.exit(main())
