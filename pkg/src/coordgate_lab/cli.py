"""``coordgate-lab <experiment> --config FILE --out DIR [--seed N] [--full-scale]``.

Exit codes: 0 success, 2 configuration error, 3 training aborted.
"""
import argparse
import json
import logging
import sys

from .errors import ConfigError, ShapeError, TrainingAborted
from .experiments import EXPERIMENTS, ExperimentConfig, run

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="coordgate-lab", description="Position-dependent convolution experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON config file; missing keys take desk-scale defaults")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="run seed (overrides the config)")
    p.add_argument("--full-scale", action="store_true", help="start from full-scale defaults")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def load_config(args):
    d = {}
    if args.config:
        try:
            with open(args.config) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        if d.get("experiment", args.experiment) != args.experiment:
            raise ConfigError(f"config is for {d['experiment']!r}, not {args.experiment!r}")
    d["experiment"] = args.experiment
    if args.out:
        d["out"] = args.out
    if args.seed is not None:
        d["seed"] = args.seed
    return ExperimentConfig.from_dict(d, full_scale=args.full_scale)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        config = load_config(args)
        run(config)
    except (ConfigError, ShapeError) as exc:
        print(f"coordgate-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"coordgate-lab: training aborted: model={exc.model} epoch={exc.epoch} batch={exc.batch}",
              file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
