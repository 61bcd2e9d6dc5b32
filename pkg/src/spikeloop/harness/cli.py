"""Command-line entry point.

    spikeloop train --config cfg.json [--seed N] [--out DIR] [--preset desk|paper]
    spikeloop eval  --config cfg.json [--seed N] [--out DIR] [--preset desk|paper]
    spikeloop sweep --config cfg.json [--seed N] [--out DIR] [--preset desk|paper]

`--preset` fills a complete baseline for the config's task (desk: reduced
scale; paper: full scale) underneath the file's own keys.  `--config` may be
omitted when `--preset` is given, in which case `--task` picks the preset
family.  `sweep` reads which sweep protocol to run from the config's
`experiment` key.

Exit codes: 0 success, 2 configuration error, 3 missing data, 4 numerical
failure during training/backprop.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, DataMissingError, NumericalError, exit_code_for
from .config import SWEEP_EXPERIMENTS, TASKS, load_config, parse_config, preset_dict
from .experiments import run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikeloop",
        description="Train and probe spiking networks on a virtual analog substrate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train a network and write metrics/checkpoint/figures"),
        ("eval", "evaluate a checkpoint on the test split"),
        ("sweep", "run the sweep protocol named by the config's 'experiment'"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (merged over --preset if given)")
        p.add_argument("--seed", type=int, help="override the config's seed list with one seed")
        p.add_argument("--out", help="override the config's output directory")
        p.add_argument("--preset", choices=("desk", "paper"), help="named baseline config")
        p.add_argument(
            "--task",
            choices=TASKS,
            help="preset family when no --config is given (default mnist16)",
        )
    return parser


def build_run_config(args):
    if args.config:
        rc = load_config(args.config, preset=args.preset)
    elif args.preset:
        rc = parse_config(preset_dict(args.task or "mnist16", args.preset))
    else:
        raise ConfigError("provide --config and/or --preset")
    if args.command == "train":
        rc.experiment = "train"
    elif args.command == "eval":
        rc.experiment = "eval"
    elif rc.experiment not in SWEEP_EXPERIMENTS:
        raise ConfigError(
            f"'sweep' needs the config's experiment to be one of {SWEEP_EXPERIMENTS}, "
            f"got {rc.experiment!r}"
        )
    if args.seed is not None:
        rc.seeds = [args.seed]
    if args.out:
        rc.output_dir = args.out
    rc.validate()
    return rc


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        rc = build_run_config(args)
        run_experiment(rc)
    except (ConfigError, DataMissingError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
