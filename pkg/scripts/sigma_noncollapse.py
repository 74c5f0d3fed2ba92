"""Train one desk-scale task for many epochs and track the sigma histogram.

Prints min sigma and the histogram L1 change over the final 20% of training,
and optionally writes one histogram row per checkpoint of the run.

    python3 scripts/sigma_noncollapse.py --epochs 200 --out out/sigma_track.csv
"""

import argparse
import csv

import numpy as np

from foovb import cli
from foovb import config as fc
from foovb import posterior as pst
from foovb import trainer as tr


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--profile", default="desk-small")
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--reduction", choices=["mean", "sum"])
    parser.add_argument("--snapshots", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out")
    args = parser.parse_args()

    cfg = fc.from_profile(args.profile, num_tasks=1, eval_every=0, seed=args.seed)
    iters = args.epochs * cfg.synth_train // cfg.batch_size
    cfg = fc.replace(cfg, iters_per_task=iters)
    if args.reduction:
        cfg = fc.replace(cfg, loss_reduction=args.reduction)
    stream, suite = cli.build_experiment(cfg)
    post = pst.init_network("diagonal", cfg.layer_sizes, np.random.default_rng([cfg.seed, 0]),
                            cfg.sigma_init)
    edges = tr.default_bin_edges(cfg.sigma_init, cfg.hist_bins)
    marks = set(np.linspace(0, iters, args.snapshots + 1).astype(int)[1:])
    marks.add(int(round(0.8 * iters)))
    hists = {}

    def keep(n, p):
        if n + 1 in marks:
            hists[n + 1] = (tr.sigma_histogram(p, edges), float(p.parts[0].sigma.min()))

    post, recs = tr.train(cfg.trainer_config(), post, stream, suite, callback=keep)
    weights = post.parts[0].sigma.size
    change = int(np.abs(hists[iters][0] - hists[int(round(0.8 * iters))][0]).sum())
    print(f"iterations={iters} test_acc={recs[-1].first_task_acc:.4f} "
          f"min_sigma={post.parts[0].sigma.min():.3e} "
          f"l1_change_last_20pct={change}/{weights} ({change / weights:.1%})")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "min_sigma"] + [f"bin{j}" for j in range(len(edges) - 1)])
            for it in sorted(hists):
                counts, smin = hists[it]
                w.writerow([it, f"{smin:.6e}"] + [int(c) for c in counts])


if __name__ == "__main__":
    main()
