"""Run the continuous (boundary-free) desk-scale stream and print the accuracy curve.

    python3 scripts/continuous_stream.py --output-dir out/desk-small-continuous
"""

import argparse
import csv
import os

from foovb import cli
from foovb import config as fc


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/desk-small-continuous.cfg")
    parser.add_argument("--output-dir", default="out/desk-small-continuous")
    args = parser.parse_args()

    cfg = fc.replace(fc.load_config(args.config), output_dir=args.output_dir)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with cli.OutputLock(cfg.output_dir):
        cli.run_experiment(cfg, cfg.output_dir)
    with open(os.path.join(cfg.output_dir, "metrics.csv")) as fh:
        for row in csv.DictReader(fh):
            print(f"iter {row['iteration']:>5}  seen={row['num_seen']}  "
                  f"avg={float(row['avg_seen_acc']):.3f}  first={float(row['first_task_acc']):.3f}")


if __name__ == "__main__":
    main()
