"""Command line entry point: one subcommand per experiment.

Usage: fracinv <experiment> --config run.json [--workers N] [--seed S]

The config must name the same experiment as the subcommand.  Before the
experiment executes, the fully resolved config is echoed to run.json in
the output directory; that file is itself a valid config reproducing
the run.  Exit codes: 0 success, 2 configuration problem, 3 violated
mathematical assumption, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, load_config
from .errors import AssumptionError, ConfigError, ConstructionError, FracinvError
from .experiments import RUNNERS
from .io import ensure_outdir, write_json


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracinv",
        description="numerical experiments for a first-and-half-order diffusion model",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--workers", type=int, default=None, help="process pool size override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg["experiment"] != args.experiment:
            raise ConfigError(
                "experiment",
                f"config names {cfg['experiment']!r} but the {args.experiment!r} "
                "command was invoked",
            )
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.workers is not None:
            cfg["workers"] = args.workers
        outdir = ensure_outdir(cfg["output_dir"])
        write_json(outdir / "run.json", cfg)
        summary = RUNNERS[args.experiment](cfg, outdir)
    except ConfigError as exc:
        print(f"fracinv: {exc}", file=sys.stderr)
        return 2
    except (AssumptionError, ConstructionError) as exc:
        print(f"fracinv: assumption violated: {exc}", file=sys.stderr)
        return 3
    except FracinvError as exc:
        print(f"fracinv: numerical failure: {exc}", file=sys.stderr)
        return 4
    keys = ", ".join(f"{k}={v}" for k, v in summary.items() if not isinstance(v, (list, dict)))
    print(f"fracinv: {args.experiment} done ({keys}); artifacts in {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
