#!/usr/bin/env python3
"""Run the cost-attack experiment on 100 synthetic ARIMA windows.

Closed-form worst-case perturbations vs random perturbations of the same
norm, swept over the default delta grid; emits records.csv / summary.json
plus plot-ready per-series CSVs.
"""

import argparse
from pathlib import Path

from tsattack.cli import main as cli_main

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "arima_cost.json"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--out-dir", default=None,
                        help="override the config's output directory")
    args = parser.parse_args()
    argv = ["experiment", "cost", "--config", args.config]
    if args.out_dir:
        argv += ["--out-dir", args.out_dir]
    return cli_main(argv)


if __name__ == "__main__":
    raise SystemExit(main())
