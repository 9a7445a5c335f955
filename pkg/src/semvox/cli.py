"""Command-line entry points.

Exit codes: 0 success, 1 config error, 2 data error, 3 numeric/degenerate error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .cloud import SemanticPointCloud
from .errors import ConfigError, SemvoxError
from .metrics import evaluate
from .pipeline import RunConfig, build_map, load_run_config
from .synth import SyntheticScene, synthesize

log = logging.getLogger("semvox")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _lengths(text: str):
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated lengths, got {text!r}") from None


def _add_metric_flags(p):
    p.add_argument("--rpe-delta", type=int, help="RPE frame interval (default 1)")
    p.add_argument("--kitti-lengths", type=_lengths, help="comma-separated segment lengths in metres")
    p.add_argument("--scale-align", action="store_true", default=None, help="similarity alignment for ATE")
    p.add_argument("--max-dt", type=float, help="timestamp association tolerance in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semvox", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-map", help="fuse a posed depth + label dataset into a voxel map")
    p.add_argument("dataset", nargs="?", type=Path, help="dataset root")
    p.add_argument("--config", type=Path, help="key = value file; flags override it")
    p.add_argument("--intrinsics", type=Path)
    p.add_argument("--trajectory", type=Path)
    p.add_argument("--remap", type=Path)
    p.add_argument("--voxel-res", type=float)
    p.add_argument("--origin", type=_lengths, help="map origin 'x,y,z'")
    p.add_argument("--kernel-l", type=float)
    p.add_argument("--kernel-sigma0", type=float)
    p.add_argument("--kernel-weights", type=Path)
    p.add_argument("--prior-alpha", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--max-range", type=float)
    p.add_argument("--associate", choices=("index", "timestamp"))
    p.add_argument("--min-confidence", type=float)
    p.add_argument("--ply-dir", type=Path, help="also write one PLY cloud per frame here")
    p.add_argument("--ply-mode", choices=("ascii", "binary"))
    p.add_argument("--report", type=Path, help="write the timing report as JSON")
    p.add_argument("--out", type=Path)
    _add_metric_flags(p)

    p = sub.add_parser("eval-traj", help="ATE / RPE / KITTI errors of an estimated trajectory")
    p.add_argument("est", type=Path)
    p.add_argument("ref", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--json", type=Path, help="also write the report as JSON")
    _add_metric_flags(p)

    p = sub.add_parser("synth", help="render an analytic scene into a dataset")
    p.add_argument("scene", type=Path, help="JSON scene spec")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--frames", type=int, default=20)

    p = sub.add_parser("export", help="convert a voxel map file")
    p.add_argument("map", type=Path)
    p.add_argument("--format", choices=("ply", "voxel-text"), default="ply")
    p.add_argument("--ply-mode", choices=("ascii", "binary"), default="binary")
    p.add_argument("--out", type=Path, required=True)
    return parser


_NOT_CONFIG = {"command", "verbose", "config", "report", "json", "est", "ref", "scene", "out_dir", "frames", "map", "format"}


def _run_config(args) -> RunConfig:
    config = RunConfig()
    if getattr(args, "config", None) is not None:
        config = config.merged(load_run_config(args.config))
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    return config.merged(flags)


def cmd_build_map(args) -> int:
    config = _run_config(args)
    if config.out is None:
        raise ConfigError("build-map needs --out")
    _, report = build_map(config)
    summary = report.as_dict()
    for key, value in summary.items():
        print(f"{key}={value}")
    if args.report is not None:
        args.report.parent.mkdir(parents=True, exist_ok=True)
        args.report.write_text(json.dumps(summary, indent=2) + "\n")
    return 0


def cmd_eval_traj(args) -> int:
    config = _run_config(args)
    est = io.read_trajectory(args.est)
    ref = io.read_trajectory(args.ref)
    report = evaluate(
        est,
        ref,
        max_dt=config.max_dt,
        delta=config.rpe_delta,
        lengths=config.kitti_lengths,
        with_scale=config.scale_align,
    )
    for key in ("ate_rmse", "rpe_trans", "rpe_rot", "kitti_trans", "kitti_rot", "num_pairs"):
        print(f"{key}={getattr(report, key)!r}")
    if args.json is not None:
        args.json.parent.mkdir(parents=True, exist_ok=True)
        args.json.write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    return 0


def cmd_synth(args) -> int:
    scene = SyntheticScene.load(args.scene)
    out = synthesize(scene, args.out_dir, args.frames)
    print(f"wrote {args.frames} frames to {out}")
    return 0


def cmd_export(args) -> int:
    meta, records = io.read_voxel_map(args.map)
    if args.format == "voxel-text":
        io.write_voxel_map(records, meta, args.out)
        return 0
    cloud = SemanticPointCloud(
        meta.centers(records), [r.expected_class for r in records], meta.num_classes
    )
    io.write_ply(cloud, args.out, args.ply_mode)
    return 0


COMMANDS = {
    "build-map": cmd_build_map,
    "eval-traj": cmd_eval_traj,
    "synth": cmd_synth,
    "export": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SemvoxError as exc:
        where = f"frame {exc.frame_index}: " if hasattr(exc, "frame_index") else ""
        print(f"semvox {args.command}: {type(exc).__name__}: {where}{exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
