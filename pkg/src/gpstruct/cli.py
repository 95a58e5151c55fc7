"""``gpstruct`` command line: fit, greedy, sample-prior, describe, predict."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config_file, run_config_from_json
from .errors import ConfigError, DataError, DegeneratePopulationError, KernelSyntaxError, NumericalDegeneracyError
from .runs import run_describe, run_fit, run_greedy, run_predict, run_sample_prior

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("gpstruct")


def _common(p: argparse.ArgumentParser, data: bool = True, sampler: bool = False, grid: bool = True):
    p.add_argument("--config", help="JSON file overriding defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-prefix", dest="out_prefix", help="output path prefix")
    if data:
        p.add_argument("--data", dest="data_path", help="two-column CSV of (x, y)")
        split = p.add_mutually_exclusive_group()
        split.add_argument("--train-end-x", dest="train_end_x", type=float, help="train on x <= this value")
        split.add_argument("--train-fraction", dest="train_fraction", type=float, help="train on the first fraction of points")
    if grid:
        p.add_argument("--grid-min", dest="grid_min", type=float)
        p.add_argument("--grid-max", dest="grid_max", type=float)
        p.add_argument("--grid-count", dest="grid_count", type=int)
    if sampler:
        p.add_argument("--particles", type=int)
        p.add_argument("--sweeps", type=int)
        p.add_argument("--mode", choices=("mh", "smc"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpstruct", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)

    _common(sub.add_parser("fit", help="sample the posterior over kernel structures"), sampler=True)
    _common(sub.add_parser("greedy", help="greedy marginal-likelihood structure search"))
    sp = sub.add_parser("sample-prior", help="draw structures from the grammar prior")
    _common(sp, data=False, grid=False)
    sp.add_argument("--count", type=int, default=10)
    dp = sub.add_parser("describe", help="summarize a posterior file by structure")
    dp.add_argument("posterior")
    pp = sub.add_parser("predict", help="evaluate a saved posterior on a new grid")
    pp.add_argument("posterior")
    _common(pp)
    return parser


def _config(args):
    data = load_config_file(args.config) if getattr(args, "config", None) else {}
    keys = (
        "seed", "particles", "sweeps", "mode", "train_end_x", "train_fraction",
        "grid_min", "grid_max", "grid_count", "data_path", "out_prefix",
    )
    return run_config_from_json(data, **{k: getattr(args, k, None) for k in keys})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.verb == "describe":
            sys.stdout.write(run_describe(args.posterior))
            return EXIT_OK
        config = _config(args)
        if args.verb == "fit":
            out = run_fit(config)
        elif args.verb == "greedy":
            out = run_greedy(config)
        elif args.verb == "sample-prior":
            for line in run_sample_prior(config, args.count):
                print(line)
            return EXIT_OK
        else:
            print(run_predict(args.posterior, config))
            return EXIT_OK
        print(out.posterior_path)
        print(out.predictions_path)
        return EXIT_OK
    except (ConfigError, KernelSyntaxError) as exc:
        print(f"gpstruct: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"gpstruct: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalDegeneracyError, DegeneratePopulationError) as exc:
        print(f"gpstruct: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
