"""Command-line entry points.

Exit codes: 0 success, 1 usage or runtime failure, 2 bad configuration
(message names the offending key path), 3 missing checkpoint. Errors are
one line on stderr, prefixed `error:`. --seed overrides every configured
seed; NL_THREADS caps worker threads.
"""

import argparse
import contextlib
import os
import sys

from . import formats, pipeline
from .config import ConfigError, RunConfig

COMMANDS = ("scene-gen", "train-recon", "train-raydrop", "simulate",
            "eval-seg", "eval-pointcloud", "ablate", "export")


@contextlib.contextmanager
def output_lock(out_dir):
    """Exclusive advisory lock on the output directory."""
    import fcntl
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, ".lock"), "w") as f:
        fcntl.flock(f, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(f, fcntl.LOCK_UN)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lidarfield",
        description="Implicit-field LiDAR simulation against analytic oracle scenes")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "export":
            p.add_argument("input")
            p.add_argument("output")
            p.add_argument("--format", choices=("ply", "ppm", "pgm"), default="ply")
        else:
            p.add_argument("--config", help="run configuration file")
            p.add_argument("--out", help="output directory (overrides [paths] out_dir)")
            p.add_argument("--seed", type=int, help="override every configured seed")
        if name == "simulate":
            p.add_argument("--no-raydrop", action="store_true",
                           help="skip the learned raydrop mask")
        if name == "ablate":
            p.add_argument("--variants", default=None,
                           help="semicolon list of raydrop,feat pairs "
                                "(e.g. 'none,none;learned,probe')")
    return parser


def load_config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.defaults()
    if args.seed is not None:
        cfg.override_seed(args.seed)
    out_dir = args.out or cfg["paths"]["out_dir"]
    cfg.values["paths"]["out_dir"] = out_dir
    return cfg, out_dir


def cmd_export(args):
    path = args.input
    if args.format == "ply":
        scan = formats.read_scan(path)
        formats.export_ply(args.output, scan)
    elif args.format == "ppm":
        scan = formats.read_scan(path)
        formats.write_label_ppm(args.output, scan.labels)
    else:
        img = formats.read_equirect(path)
        formats.write_pgm(args.output, img.valid.astype(float))
    print(f"wrote {args.output}")
    return 0


def run_command(args):
    if args.command == "export":
        return cmd_export(args)
    cfg, out_dir = load_config(args)
    with output_lock(out_dir):
        cfg.echo(out_dir)
        if args.command == "scene-gen":
            written = pipeline.generate_scene_data(cfg, out_dir)
            print(f"wrote {len(written)} scans under {out_dir}/scans")
        elif args.command == "train-recon":
            _, history = pipeline.run_reconstruction(cfg, out_dir)
            last = history[-1] if history else {}
            print(f"wrote {out_dir}/field.nlckpt "
                  f"(final depth loss {last.get('depth', float('nan')):.4f} m)")
        elif args.command == "train-raydrop":
            _, history = pipeline.run_raydrop_training(cfg, out_dir)
            last = history[-1] if history else {}
            print(f"wrote {out_dir}/raydrop.nlckpt "
                  f"(final mask loss {last.get('mask', float('nan')):.4f})")
        elif args.command == "simulate":
            paths = pipeline.run_simulate(cfg, out_dir,
                                          use_raydrop=not args.no_raydrop)
            print(f"wrote {len(paths)} simulated scans under {out_dir}/scans")
        elif args.command == "eval-pointcloud":
            report = pipeline.run_eval_pointcloud(cfg, out_dir)
            print("  ".join(f"{k}={v:.4f}" for k, v in report.items()))
        elif args.command == "eval-seg":
            report = pipeline.run_eval_seg(cfg, out_dir)
            print("  ".join(f"{k}={v:.4f}" for k, v in report.items()))
        elif args.command == "ablate":
            variants = None
            if args.variants:
                variants = [tuple(v.split(",")) for v in args.variants.split(";")]
            rows = pipeline.run_ablation(cfg, out_dir, variants)
            for row in rows:
                print("  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                for k, v in row.items()))
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("error: usage: missing command", file=sys.stderr)
        return 1
    try:
        return run_command(args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        missing = str(e.filename or e)
        if missing.endswith(".nlckpt"):
            print(f"error: missing-checkpoint: {missing}", file=sys.stderr)
            return 3
        print(f"error: missing-file: {missing}", file=sys.stderr)
        return 1
    except (formats.FormatError, ValueError, FloatingPointError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
