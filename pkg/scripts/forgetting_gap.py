"""First-task accuracy of FOO-VB versus SGD after the last task, over several seeds.

    python3 scripts/forgetting_gap.py --seeds 0 1 2 3 4 --out out/forgetting_gap.csv
"""

import argparse
import csv
import tempfile

import numpy as np

from foovb import cli
from foovb import config as fc


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/desk-small.cfg")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--out", help="optional CSV with one row per seed")
    args = parser.parse_args()

    rows = []
    for seed in args.seeds:
        cfg = fc.replace(fc.load_config(args.config), seed=seed, sgd_baseline=True)
        with tempfile.TemporaryDirectory() as tmp:
            summary = cli.run_experiment(cfg, tmp)
        foo = summary["final"]["first_task_acc"]
        sgd = summary["baseline_final"]["first_task_acc"]
        rows.append((seed, foo, sgd, foo - sgd))
        print(f"seed={seed} foovb={foo:.4f} sgd={sgd:.4f} margin={foo - sgd:+.4f}", flush=True)

    margins = np.array([r[3] for r in rows])
    print(f"mean margin={margins.mean():+.4f} positive in {np.sum(margins > 0)}/{len(rows)} seeds")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "foovb_first_task_acc", "sgd_first_task_acc", "margin"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
