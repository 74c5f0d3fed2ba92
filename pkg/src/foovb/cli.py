"""Command-line entry point: ``foovb run|verify|bench|export-hist``.

Exit codes: 0 success, 1 check failed, 2 bad input or configuration,
3 numerical abort during training.
"""

import argparse
import json
import logging
import os
import subprocess
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from . import config as cfgmod
from . import posterior as pst
from . import stream as st
from . import trainer as tr
from . import verify as vf
from .errors import (
    BadMagic,
    ConfigError,
    CountMismatch,
    ConvergenceFailure,
    FooVBError,
    GsvdFailure,
    IllConditioned,
    IndefiniteMatrix,
    NonFinite,
    NonSymmetric,
    TruncatedFile,
    WrongVariant,
)

log = logging.getLogger("foovb")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
NUMERICAL_ERRORS = (NonFinite, ConvergenceFailure, GsvdFailure, IllConditioned,
                    IndefiniteMatrix, NonSymmetric)


def version_string():
    """``git describe`` of the source tree when available, else the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10, check=True)
        return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return __version__


# -- experiment assembly -------------------------------------------------------

def build_datasets(cfg):
    """(train, test) datasets for a RunConfig, padded when ``pad_side`` is set."""
    if cfg.dataset == "synth":
        classes = cfg.layer_sizes[-1]
        full = st.synth_dataset(cfg.synth_train + cfg.synth_test, cfg.synth_side, classes,
                                cfg.seed, noise=cfg.synth_noise)
        train = full.subset(np.arange(cfg.synth_train))
        test = full.subset(np.arange(cfg.synth_train, len(full)))
    else:
        train = st.load_idx(*st.mnist_paths(cfg.data_dir or None, "train"))
        test = st.load_idx(*st.mnist_paths(cfg.data_dir or None, "test"))
        if cfg.train_limit:
            train = train.subset(np.arange(min(cfg.train_limit, len(train))))
        if cfg.test_limit:
            test = test.subset(np.arange(min(cfg.test_limit, len(test))))
    if cfg.pad_side:
        train, test = st.pad_to(train, cfg.pad_side), st.pad_to(test, cfg.pad_side)
    d = train.side * train.side
    if d != cfg.layer_sizes[0]:
        raise ConfigError(f"layer_sizes[0] = {cfg.layer_sizes[0]} but images have {d} pixels")
    return train, test


def build_schedule(cfg):
    if cfg.schedule == "discrete":
        return st.discrete_schedule(cfg.num_tasks, cfg.iters_per_task)
    return st.continuous_schedule(cfg.num_tasks, cfg.iters_per_task, cfg.crossfade_frac)


def build_experiment(cfg):
    """Stream (for the trainer) and evaluation suite (for the evaluator)."""
    train, test = build_datasets(cfg)
    d = train.side * train.side
    tasks = [st.make_task(t, d, cfg.seed) for t in range(cfg.num_tasks)]
    schedule = build_schedule(cfg)
    stream = st.TaskStream(train, tasks, schedule, cfg.batch_size, cfg.seed)
    suite = tr.EvalSuite(st.permuted_testsets(test, tasks), schedule)
    return stream, suite


def run_experiment(cfg, out_dir):
    """Train per ``cfg`` and write the run artifacts into ``out_dir``.

    Files: metrics.csv, timing.csv, summary.json, checkpoint.npz, plus
    sigma_hist.csv (diagonal variant) and baseline_metrics.csv (when the
    SGD baseline is enabled). Returns the summary dict.
    """
    tcfg = cfg.trainer_config()
    stream, suite = build_experiment(cfg)
    post = pst.init_network(cfg.variant, cfg.layer_sizes,
                            np.random.default_rng([cfg.seed, 0]), cfg.sigma_init,
                            cfg.alpha, cfg.max_full_dim)
    try:
        post, records = tr.train(tcfg, post, stream, suite)
    except NonFinite as exc:
        last = getattr(exc, "posterior", None)
        if last is not None:
            pst.save_checkpoint(last, os.path.join(out_dir, "abort_checkpoint.npz"))
        raise
    tr.write_metrics_csv(records, os.path.join(out_dir, "metrics.csv"))
    tr.write_timing_csv(records, os.path.join(out_dir, "timing.csv"))
    pst.save_checkpoint(post, os.path.join(out_dir, "checkpoint.npz"))
    if post.variant == "diagonal":
        edges = tr.default_bin_edges(cfg.sigma_init, cfg.hist_bins)
        tr.write_hist_csv(edges, tr.sigma_histogram(post, edges),
                          os.path.join(out_dir, "sigma_hist.csv"))
    summary = {
        "version": version_string(),
        "config": cfg.to_dict(),
        "final": asdict(records[-1]) if records else None,
    }
    if cfg.sgd_baseline:
        base_stream, base_suite = build_experiment(cfg)
        _, base = tr.train_sgd_baseline(tcfg, base_stream, base_suite)
        tr.write_metrics_csv(base, os.path.join(out_dir, "baseline_metrics.csv"))
        summary["baseline_final"] = asdict(base[-1]) if base else None
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


class OutputLock:
    """Exclusive ownership of an output directory through a ``.lock`` file."""

    def __init__(self, directory):
        self.path = os.path.join(directory, ".lock")
        self._fd = None

    def __enter__(self):
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise ConfigError(f"output directory is locked by another run ({self.path})") from exc
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self._fd)
        os.unlink(self.path)
        return False


# -- commands ---------------------------------------------------------------------

def cmd_run(args):
    try:
        cfg = cfgmod.load_config(args.config)
        overrides = {}
        if args.output_dir:
            overrides["output_dir"] = args.output_dir
        if args.data_dir:
            overrides["data_dir"] = args.data_dir
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            cfg = cfgmod.replace(cfg, **overrides)
        os.makedirs(cfg.output_dir, exist_ok=True)
        with OutputLock(cfg.output_dir):
            summary = run_experiment(cfg, cfg.output_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, BadMagic, TruncatedFile, CountMismatch) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"numerical abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    final = summary["final"]
    if final:
        print(f"iterations={final['iteration']} avg_seen_acc={final['avg_seen_acc']:.4f} "
              f"first_task_acc={final['first_task_acc']:.4f}")
    print(f"artifacts written to {cfg.output_dir}")
    return EXIT_OK


def cmd_verify(args):
    names = list(vf.SUITES)
    if args.filter:
        if args.filter not in vf.SUITES:
            print(f"unknown suite {args.filter!r}; valid suites: {', '.join(vf.SUITES)}",
                  file=sys.stderr)
            return EXIT_USAGE
        names = [args.filter]
    ok = True
    for name in names:
        result = vf.SUITES[name]()
        print(result.line())
        ok &= result.passed
    return EXIT_OK if ok else EXIT_FAIL


def _parse_k_list(text):
    try:
        ks = [int(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}") from exc
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K list must hold positive integers")
    return ks


def cmd_bench(args):
    if args.config:
        try:
            tcfg = cfgmod.load_config(args.config).trainer_config()
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    else:
        tcfg = cfgmod.from_profile("desk-small").trainer_config()
    rows = tr.runtime_probe(tcfg, args.k, iters=args.iters)
    sgd = rows[0][1]
    rows = rows[1:]
    print("k,seconds_per_iter")
    for k, sec in rows:
        print(f"{k},{sec:.6e}")
    slope, intercept, r2 = tr.affine_fit([k for k, _ in rows], [s for _, s in rows])
    print(f"fit slope={slope:.6e} intercept={intercept:.6e} r2={r2:.4f}")
    ratios = ", ".join(f"K={k}: {s / sgd:.2f}x" for k, s in rows)
    print(f"sgd seconds_per_iter={sgd:.6e}; ratio vs SGD {ratios} "
          "(reference: 3.12x at K=2, 11.95x at K=10 on the original hardware)",
          file=sys.stderr)
    secs = [s for _, s in sorted(rows)]
    if any(b < a for a, b in zip(secs, secs[1:])):
        print("seconds/iter is not monotone in K", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_export_hist(args):
    if args.bins < 1:
        print("--bins must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        post = pst.load_checkpoint(args.checkpoint)
        if post.variant != "diagonal":
            raise WrongVariant(f"checkpoint holds a {post.variant} posterior")
    except WrongVariant as exc:
        print(f"wrong variant: {exc}; sigma histograms need a diagonal checkpoint",
              file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read checkpoint {args.checkpoint}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sigma = post.parts[0].sigma
    edges = np.linspace(0.0, float(sigma.max()), args.bins + 1)
    counts = tr.sigma_histogram(post, edges)
    if args.output:
        tr.write_hist_csv(edges, counts, args.output)
    else:
        tr.write_hist_rows(edges, counts, sys.stdout)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="foovb", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train from a config file")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.add_argument("--data-dir", help=f"IDX directory (default: ${st.DATA_DIR_ENV})")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run numerical property suites")
    p.add_argument("filter", nargs="?", help=f"one of: {', '.join(vf.SUITES)}")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="seconds per iteration versus K")
    p.add_argument("--k", type=_parse_k_list, default=[2, 4, 8, 16, 32])
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--config")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-hist", help="sigma histogram CSV from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--output")
    p.set_defaults(func=cmd_export_hist)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FooVBError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc, NUMERICAL_ERRORS) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
