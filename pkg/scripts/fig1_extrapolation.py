#!/usr/bin/env python3
"""Extrapolation comparison on a CO2-style monthly series.

Trains on x <= 1983 and compares the posterior mixture's 10-90% band with the
greedy single model's band on the held-out years.  Without --data a synthetic
trend + seasonal + noise series is generated.

    python scripts/fig1_extrapolation.py --out-dir runs/fig1 \
        --config scripts/fig1_config.json --particles 32 --sweeps 50
"""

from __future__ import annotations

import argparse
import json
import logging
import time

from gpstruct.config import load_config_file
from gpstruct.experiments import EXTRAPOLATION_BASE, extrapolation_configs, extrapolation_experiment, synthetic_co2_csv


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", help="two-column CSV (decimal year, ppm); synthetic if omitted")
    ap.add_argument("--config", help="JSON config shared by both engines (default: the package defaults for this comparison)")
    ap.add_argument("--out-dir", default="runs/fig1")
    ap.add_argument("--particles", type=int, default=32)
    ap.add_argument("--sweeps", type=int, default=50)
    ap.add_argument("--mode", choices=("mh", "smc"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    data = args.data or synthetic_co2_csv(f"{args.out_dir}/co2_synthetic.csv")
    base = load_config_file(args.config) if args.config else EXTRAPOLATION_BASE
    bayes, greedy = extrapolation_configs(
        data, args.out_dir, base, particles=args.particles, sweeps=args.sweeps, mode=args.mode, seed=args.seed
    )
    t0 = time.time()
    summary = extrapolation_experiment(bayes, greedy)
    summary["seconds"] = round(time.time() - t0, 1)
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
