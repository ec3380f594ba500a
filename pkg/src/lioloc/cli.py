"""Command-line front end.

Subcommands: simgen (dataset generation), mapbuild (offline prior-map
assembly), localize (run the estimator over a dataset), eval (compare
trajectories). Exit codes: 0 success, 1 validation error, 2 runtime or
data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dataio, evaluation, pipeline
from .config import ConfigError
from .dataio import DataFormatError


def _load_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    if args.set:
        cfg = config_mod.apply_overrides(cfg, args.set)
    cfg.validate()
    return cfg


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a single config key (repeatable)",
    )


def _cmd_simgen(args) -> int:
    cfg = _load_config(args)
    manifest = pipeline.run_simgen(cfg, args.out)
    print(f"dataset written to {args.out}")
    print(f"  scans: {manifest['n_scans']}  imu: {manifest['n_imu']}  "
          f"map points: {manifest['n_map_points']}")
    print(f"  config hash: {manifest['config_hash']}")
    return 0


def _cmd_mapbuild(args) -> int:
    cfg = _load_config(args)
    stats = pipeline.run_mapbuild(cfg, args.dataset, args.out)
    print(f"prior map written to {stats['out']}")
    print(f"  aggregated points: {stats['aggregated']}  "
          f"kept after removal+voxel: {stats['map_points']}")
    return 0


def _cmd_localize(args) -> int:
    cfg = _load_config(args)
    stats = pipeline.run_localize(cfg, args.dataset, args.out)
    print(f"trajectory written to {args.out}")
    for key in (
        "n_imu",
        "n_scans",
        "n_ticks",
        "cv_steps",
        "mode_transitions",
        "stale_rejected",
        "dropped_points",
        "degraded_updates",
        "diverged_updates",
        "iterations_total",
        "n_poses",
        "max_output_gap",
        "gravity_norm",
        "runtime_s",
    ):
        print(f"  {key}: {stats[key]}")
    return 0


def _cmd_eval(args) -> int:
    t_e, p_e, r_e = dataio.load_tum(args.estimate)
    t_g, p_g, r_g = dataio.load_tum(args.groundtruth)
    est = evaluation.Trajectory(t_e, p_e, r_e)
    gt = evaluation.Trajectory(t_g, p_g, r_g)
    try:
        report, table = evaluation.compute_report(
            est, gt, max_dt=args.max_dt, t_min=args.t_min, align=args.align
        )
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    sys.stdout.write(report.text())
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
        )
    if args.pairs:
        header = "t abs_err lateral longitudinal vertical rot_rad"
        np.savetxt(args.pairs, table, header=header, fmt="%.9f")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lioloc",
        description="dual-map LiDAR-inertial localization tools",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simgen", help="generate a synthetic dataset")
    _add_config_args(p)
    p.add_argument("out", help="output dataset directory")
    p.set_defaults(func=_cmd_simgen)

    p = sub.add_parser("mapbuild", help="build a prior map from posed scans")
    _add_config_args(p)
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("out", help="output map path (.pm1 or .pmb1)")
    p.set_defaults(func=_cmd_mapbuild)

    p = sub.add_parser("localize", help="run localization over a dataset")
    _add_config_args(p)
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("out", help="output trajectory (TUM format)")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("eval", help="compare trajectories (TUM format)")
    p.add_argument("estimate")
    p.add_argument("groundtruth")
    p.add_argument("--max-dt", type=float, default=0.02)
    p.add_argument("--t-min", type=float, default=None,
                   help="ignore matches before this estimate time")
    p.add_argument("--align", action="store_true",
                   help="rigidly align the estimate first")
    p.add_argument("--report", help="write the report as JSON")
    p.add_argument("--pairs", help="write the per-pair error table")
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataFormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
