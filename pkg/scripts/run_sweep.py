"""Run a simulation sweep from a YAML config and print the error table.

Example: python3 scripts/run_sweep.py configs/figure3_left.yaml --out fig3_left.csv
"""

import argparse
import dataclasses
import sys
from pathlib import Path

from clips import cli
from clips import simulate as sim


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config", type=Path)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--replicates", type=int, help="override replicate_count")
    args = parser.parse_args()

    config = cli.load_experiment(args.config)
    if args.replicates is not None:
        config = dataclasses.replace(config, replicate_count=args.replicates)
    table = sim.run_experiment(config, progress=lambda msg: print(msg, file=sys.stderr))
    text = table.to_csv()
    if args.out is not None:
        cli.write_atomic(args.out, text)
    print(text, end="")


if __name__ == "__main__":
    main()
