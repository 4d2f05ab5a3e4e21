"""Command line: ``netinfer generate|infer|evaluate|reproduce``.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O error.
"""
import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import pipeline
from .config import config_hash, grid_points, load_config, preset_config
from .errors import ConfigError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="netinfer",
        description="Infer coupling weights and local dynamics of oscillator networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "simulate a network and write trajectory files",
        "infer": "run the regression on a generated run directory",
        "evaluate": "score an inferred run against its ground truth",
        "reproduce": "run a full experiment grid and write summary.csv",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--preset", help="named preset used as the base configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the configuration)")
        p.add_argument("--out", default="netinfer_out", help="output or run directory")
        p.add_argument("--run", type=int, default=0,
                       help="run index within the grid (generate/infer/evaluate)")
    return parser


def resolve_config(args):
    if not args.config and not args.preset:
        raise ConfigError("give --config and/or --preset")
    cfg = preset_config(args.preset) if args.preset else None
    if args.config:
        cfg = load_config(args.config, base=cfg)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _single(cfg, run):
    """Configuration and global run index for ``--run`` of a (possibly gridded) config."""
    points = grid_points(cfg)
    if not 0 <= run < len(points):
        raise ConfigError(f"run index {run} outside 0..{len(points) - 1}", "run")
    _, pcfg, index = points[run]
    return pcfg, index


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        if args.command == "generate":
            pcfg, index = _single(cfg, args.run)
            pipeline.generate_run(pcfg, out, index)
            print(f"wrote {out} (config {config_hash(pcfg)}, seed {pcfg.seed})")
        elif args.command == "infer":
            pcfg, index = _single(cfg, args.run)
            res = pipeline.infer_run(pcfg, out, index)
            print(f"{len(res.history) - 1} refit iterations written to {out}")
        elif args.command == "evaluate":
            pcfg, index = _single(cfg, args.run)
            rep = pipeline.evaluate_run(pcfg, out, index)
            print(json.dumps({"epsilon_C": rep.epsilon_C, "t_p": rep.t_p,
                              "S_local": rep.S_local_total, "S_combined": rep.S_combined}))
        else:
            results = pipeline.reproduce(cfg, out)
            bad = [label for label, _, row in results if row["status"] != "ok"]
            print(f"{len(results)} runs, summary in {out / 'summary.csv'}")
            if bad:
                print(f"diverged: {', '.join(bad)}", file=sys.stderr)
                return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"netinfer: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"netinfer: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"netinfer: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
