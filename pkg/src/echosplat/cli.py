"""Command-line workflow: phantom, train, eval, render, serve.

All flags can also come from a TOML config file (--config); explicit
command-line flags win.  The default serve port can be set through the
ECHOSPLAT_PORT environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .dataset import make_axial_stack, split_dataset
from .geometry import InvalidParameterError, ProbePose, SliceSpec
from .metrics import evaluate_views
from .rasterizer import render_slice
from .trainer import (TrainConfig, TrainingDivergedError, load_checkpoint,
                      train)
from .volume import (Volume, load_volume, make_phantom, sample_slice,
                     save_volume, volume_info)


def write_pgm(pixels: np.ndarray, path) -> None:
    """8-bit binary PGM of a [0, 1] image."""
    data = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def pgm_bytes(pixels: np.ndarray) -> bytes:
    data = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode() + data.tobytes()


def pose_from_args(args) -> ProbePose:
    if getattr(args, "matrix", None):
        vals = [float(x) for x in args.matrix]
        if len(vals) != 12:
            raise InvalidParameterError("--matrix needs 12 floats (row-major R | t)")
        return ProbePose(np.array(vals[:9]).reshape(3, 3), np.array(vals[9:]))
    return ProbePose.from_euler_deg(args.rx, args.ry, args.rz,
                                    args.tx, args.ty, args.tz)


def _add_pose_flags(p):
    p.add_argument("--rx", type=float, default=0.0, help="rotation about x (deg)")
    p.add_argument("--ry", type=float, default=0.0, help="rotation about y (deg)")
    p.add_argument("--rz", type=float, default=0.0, help="rotation about z (deg)")
    p.add_argument("--tx", type=float, default=0.0, help="translation x (mm)")
    p.add_argument("--ty", type=float, default=0.0, help="translation y (mm)")
    p.add_argument("--tz", type=float, default=0.0, help="translation z (mm)")
    p.add_argument("--matrix", nargs=12, metavar="F",
                   help="raw pose: 9 rotation floats row-major then 3 translation mm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="echosplat")
    parser.add_argument("--config", type=Path,
                        help="TOML file with per-command defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic ground-truth volume")
    p.add_argument("--kind", choices=["shells", "blobs", "checker"],
                   default="shells")
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--spacing", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("train", help="reconstruct a Gaussian cloud from slices")
    p.add_argument("--volume", required=True, help="ground-truth volume path")
    p.add_argument("--n-slices", type=int, default=64)
    p.add_argument("--perturb-deg", type=float, default=0.0)
    p.add_argument("--train-fraction", type=float, default=1.0,
                   help="<1 holds out a random test split")
    p.add_argument("--n-gaussians", type=int, default=20000)
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--time-budget-mins", type=float, default=None,
                   help="stop after this wall-clock budget")
    p.add_argument("-o", "--output", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="JSON-lines metric log path")

    p = sub.add_parser("eval", help="orthogonal-view evaluation report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--n-per-axis", type=int, default=32)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--min-ssim", type=float, default=None,
                   help="exit nonzero if any family mean SSIM is below this")
    p.add_argument("-o", "--output", default=None, help="report JSON path")

    p = sub.add_parser("render", help="render one slice from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_pose_flags(p)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=160)
    p.add_argument("--spacing", type=float, default=0.6)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", required=True, help="PGM output path")
    p.add_argument("--raw-out", default=None,
                   help="also write raw float32 pixels here")

    p = sub.add_parser("serve", help="HTTP slice service for the viewer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", default=None,
                   help="optional ground truth backing /gt_slice")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--workers", type=int, default=1)
    return parser


def _apply_config_file(parser, argv):
    """Config-file values become defaults; CLI flags keep precedence."""
    ns, _ = parser.parse_known_args(argv)
    if not ns.config:
        return argv
    with open(ns.config, "rb") as fh:
        table = tomllib.load(fh)
    section = table.get(ns.command, {})
    defaults = {k.replace("-", "_"): v for k, v in section.items()}
    for action in parser._subparsers._group_actions[0].choices[ns.command]._actions:
        if action.dest in defaults:
            action.default = defaults[action.dest]
    return argv


def cmd_phantom(args) -> int:
    vol = make_phantom(args.kind, args.dims, args.spacing, args.seed)
    save_volume(vol, args.output)
    info = volume_info(vol)
    print(json.dumps(info))
    return 0


def _build_dataset(args, vol: Volume):
    ds = make_axial_stack(vol, args.n_slices, perturb_deg=args.perturb_deg,
                          seed=args.seed)
    if args.train_fraction < 1.0:
        ds = split_dataset(ds, args.train_fraction, seed=args.seed)
    return ds


def cmd_train(args) -> int:
    vol = load_volume(args.volume)
    ds = _build_dataset(args, vol)
    cfg = TrainConfig(n_gaussians=args.n_gaussians, iterations=args.iterations,
                      seed=args.seed, workers=args.workers)
    kwargs = {}
    if args.time_budget_mins is not None:
        kwargs["time_budget_s"] = args.time_budget_mins * 60.0
    try:
        train(ds, cfg, bounds=vol.world_bounds(), checkpoint_path=args.output,
              log_path=args.log, **kwargs)
    except TrainingDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    print(json.dumps({"checkpoint": str(args.output)}))
    return 0


def cmd_eval(args) -> int:
    cloud, _ = load_checkpoint(args.checkpoint)
    vol = load_volume(args.volume)
    report = evaluate_views(cloud, vol, args.n_per_axis, workers=args.workers)
    payload = json.dumps(report.to_json_dict(), sort_keys=True, indent=2)
    if args.output:
        Path(args.output).write_text(payload)
    print(payload)
    if args.min_ssim is not None:
        worst = min(v["ssim_mean"] for v in report.families.values())
        if worst < args.min_ssim:
            print(f"FAIL: mean SSIM {worst:.4f} < {args.min_ssim}",
                  file=sys.stderr)
            return 2
    return 0


def cmd_render(args) -> int:
    cloud, _ = load_checkpoint(args.checkpoint)
    pose = pose_from_args(args)
    spec = SliceSpec(width=args.width, height=args.height,
                     spacing=args.spacing, pose=pose)
    img = render_slice(cloud, spec, workers=args.workers)
    write_pgm(img.pixels, args.output)
    if args.raw_out:
        Path(args.raw_out).write_bytes(
            np.ascontiguousarray(img.pixels, "<f4").tobytes())
    return 0


def cmd_serve(args) -> int:
    from .server import run_server
    run_server(args)
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    argv = _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    handlers = {"phantom": cmd_phantom, "train": cmd_train, "eval": cmd_eval,
                "render": cmd_render, "serve": cmd_serve}
    try:
        return handlers[args.command](args)
    except InvalidParameterError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
