"""Training loop, evaluation, SGD baseline and runtime probe."""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from threadpoolctl import threadpool_limits

from . import posterior as pst
from .errors import EmptyTestSet, NonFinite, WrongVariant
from .model import Architecture, Batch, NetworkParams, accuracy, loss_and_grad

log = logging.getLogger(__name__)

WARMUP_ITERS = 10


@dataclass
class TrainerConfig:
    variant: str = "diagonal"
    layer_sizes: tuple = (64, 32, 32, 10)
    k_train: int = 10
    k_eval: int = 64
    batch_size: int = 128
    total_iters: int = 0  # 0: run the whole stream
    sigma_init: float = 0.047
    alpha: float = 0.5
    eval_every: int = 500
    seed: int = 0
    loss_reduction: str = "mean"
    sigma_min: float = 0.0
    max_full_dim: int = pst.MAX_FULL_DIM
    lr: float = 0.1  # SGD baseline only, on the batch-mean loss
    hist_bins: int = 20
    n_workers: int = 1

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if self.variant not in pst.VARIANTS:
            raise WrongVariant(f"unknown variant {self.variant!r}")
        if self.k_train < 1 or self.k_eval < 1 or self.batch_size < 1:
            raise ValueError("k_train, k_eval and batch_size must be >= 1")
        if self.variant in ("diagonal", "full") and not self.sigma_init > 0:
            raise ValueError("sigma_init must be positive")
        if self.variant == "matrix_variate" and not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError("loss_reduction must be 'mean' or 'sum'")


@dataclass
class MetricsRecord:
    iteration: int
    task_acc: list
    avg_seen_acc: float
    first_task_acc: float
    seconds_per_iter: float
    sigma_hist: list = field(default=None)


class EvalSuite:
    """Per-task test sets plus the schedule that says which tasks were seen.

    Only the evaluator holds task identity; the trainer never inspects it.
    """

    def __init__(self, testsets, schedule):
        if not testsets:
            raise EmptyTestSet("need at least one test set")
        self.testsets = list(testsets)
        self.schedule = schedule

    def seen(self, iteration):
        return [t for t in range(len(self.testsets))
                if self.schedule.first_iteration(t) <= iteration]

    def eval_points(self, total_iters, eval_every):
        """1-based iteration counts after which to evaluate."""
        pts = {total_iters}
        ipt = self.schedule.iters_per_task
        pts.update(range(ipt, total_iters + 1, ipt))
        if eval_every > 0:
            pts.update(range(eval_every, total_iters + 1, eval_every))
        return sorted(p for p in pts if 0 < p <= total_iters)


def sampling_rngs(seed):
    """Independent generators for training noise and evaluation noise."""
    return np.random.default_rng([int(seed), 2]), np.random.default_rng([int(seed), 3])


def default_bin_edges(sigma_init, bins=20):
    return np.linspace(0.0, 2.0 * sigma_init, bins + 1)


def sigma_histogram(post, bin_edges):
    """Counts of sigma values per bin; values outside the edges go to the end bins."""
    if isinstance(post, pst.NetworkPosterior):
        if post.variant != "diagonal":
            raise WrongVariant(f"sigma histogram needs the diagonal variant, got {post.variant}")
        post = post.parts[0]
    if not isinstance(post, pst.DiagonalPosterior):
        raise WrongVariant("sigma histogram needs a diagonal posterior")
    edges = np.asarray(bin_edges, dtype=np.float64)
    sigma = np.clip(post.sigma, edges[0], edges[-1])
    counts, _ = np.histogram(sigma, bins=edges)
    return counts


def evaluate(posterior, testsets, config, rng=None):
    """Accuracy per test set.

    Diagonal posteriors are evaluated at the mean; the other variants average
    the accuracy of ``config.k_eval`` sampled networks.
    """
    if not testsets:
        raise EmptyTestSet("no test sets to evaluate")
    if posterior.variant == "diagonal":
        params = pst.mean_params(posterior)
        return [accuracy(params, ts) for ts in testsets]
    if rng is None:
        rng = sampling_rngs(config.seed)[1]
    totals = np.zeros(len(testsets))
    for _ in range(config.k_eval):
        params = pst.transform_network(posterior, pst.draw_noise(posterior, rng))
        totals += [accuracy(params, ts) for ts in testsets]
    return list(totals / config.k_eval)


def _record(iteration, accs, seen, seconds, hist):
    seen_accs = [accs[t] for t in seen]
    return MetricsRecord(
        iteration=iteration,
        task_acc=seen_accs,
        avg_seen_acc=float(np.mean(seen_accs)),
        first_task_acc=float(accs[0]),
        seconds_per_iter=seconds,
        sigma_hist=None if hist is None else [int(c) for c in hist],
    )


def _median_time(times):
    usable = times[WARMUP_ITERS:] if len(times) > WARMUP_ITERS else times
    return float(np.median(usable)) if usable else 0.0


def train(config, posterior, stream, suite, objective=None, callback=None):
    """Run FOO-VB over ``stream``; returns ``(posterior, records)``.

    ``objective(params, batch) -> (loss, grad)`` defaults to softmax
    cross-entropy with ``config.loss_reduction``. ``callback(n, posterior)``
    is called after every update.
    """
    if objective is None:
        objective = partial(loss_and_grad, reduction=config.loss_reduction)
    total = config.total_iters or stream.total_iters
    rng, eval_rng = sampling_rngs(config.seed)
    points = set(suite.eval_points(total, config.eval_every)) if suite is not None else set()
    edges = default_bin_edges(config.sigma_init, config.hist_bins)
    records, times = [], []
    pool = ThreadPoolExecutor(config.n_workers) if config.n_workers > 1 else None

    def grad_of(noise, batch):
        params = pst.transform_network(posterior, noise)
        return pst.gradient_parts(posterior, objective(params, batch)[1])

    try:
        for n in range(total):
            start = time.perf_counter()
            batch = stream.batch(n)
            noises = [pst.draw_noise(posterior, rng) for _ in range(config.k_train)]
            if pool is None:
                grads = [grad_of(e, batch) for e in noises]
            else:
                grads = list(pool.map(grad_of, noises, [batch] * len(noises)))
            try:
                posterior = pst.update_network(posterior, noises, grads, config.sigma_min)
            except NonFinite as exc:
                err = NonFinite(f"iteration {n}: {exc}")
                err.posterior = posterior  # last finite state, for the caller's dump
                raise err from exc
            times.append(time.perf_counter() - start)
            if callback is not None:
                callback(n, posterior)
            if n + 1 in points:
                accs = evaluate(posterior, suite.testsets, config, eval_rng)
                hist = sigma_histogram(posterior, edges) if posterior.variant == "diagonal" else None
                records.append(_record(n + 1, accs, suite.seen(n), _median_time(times), hist))
                log.info("iter %d avg %.4f first %.4f", n + 1, records[-1].avg_seen_acc,
                         records[-1].first_task_acc)
    finally:
        if pool is not None:
            pool.shutdown()
    return posterior, records


def init_sgd_params(layer_sizes, seed):
    """Same mean initializer as the diagonal posterior."""
    arch = Architecture(tuple(layer_sizes))
    rng = np.random.default_rng([int(seed), 0])
    return NetworkParams.from_flat(arch, pst.init_diagonal(arch.shapes, 1.0, rng).mu)


def train_sgd_baseline(config, stream, suite, params=None, objective=None, lr=None):
    """Plain SGD on the same stream and evaluation protocol.

    The step size applies to the batch-mean loss regardless of
    ``config.loss_reduction`` (which only affects FOO-VB).
    """
    if objective is None:
        objective = partial(loss_and_grad, reduction="mean")
    lr = config.lr if lr is None else lr
    if params is None:
        params = init_sgd_params(config.layer_sizes, config.seed)
    arch = params.architecture
    theta = params.flatten()
    total = config.total_iters or stream.total_iters
    points = set(suite.eval_points(total, config.eval_every))
    records, times = [], []
    for n in range(total):
        start = time.perf_counter()
        batch = stream.batch(n)
        _, grad = objective(NetworkParams.from_flat(arch, theta), batch)
        theta = theta - lr * grad.flatten()
        if not np.all(np.isfinite(theta)):
            raise NonFinite(f"iteration {n}: SGD produced non-finite weights")
        times.append(time.perf_counter() - start)
        if n + 1 in points:
            current = NetworkParams.from_flat(arch, theta)
            accs = [accuracy(current, ts) for ts in suite.testsets]
            records.append(_record(n + 1, accs, suite.seen(n), _median_time(times), None))
    return NetworkParams.from_flat(arch, theta), records


# -- runtime probe ------------------------------------------------------------

def affine_fit(xs, ys):
    """Least-squares line; returns ``(slope, intercept, r_squared)``."""
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = np.sum((ys - ys.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def _probe_batches(config, n_batches):
    rng = np.random.default_rng([config.seed, 4])
    d_in, classes = config.layer_sizes[0], config.layer_sizes[-1]
    return [Batch(rng.uniform(size=(config.batch_size, d_in)),
                  rng.integers(0, classes, size=config.batch_size))
            for _ in range(n_batches)]


def runtime_probe(config, k_values, iters=100, warmup=WARMUP_ITERS, include_sgd=True):
    """Median seconds per FOO-VB iteration for each K (single-threaded BLAS).

    Iterations for the different K values (and the SGD step) are interleaved
    round-robin, so slow drift in machine load hits every K alike.

    Returns a list of ``(k, seconds)``; when ``include_sgd`` the first row is
    ``(0, seconds)`` for a plain SGD step on the same batches.
    """
    if not k_values:
        raise ValueError("k_values must be nonempty")
    batches = _probe_batches(config, 8)
    objective = partial(loss_and_grad, reduction=config.loss_reduction)
    rng = np.random.default_rng([config.seed, 5])
    posts = [pst.init_network(config.variant, config.layer_sizes, rng, config.sigma_init,
                              config.alpha, config.max_full_dim) for _ in k_values]
    params = init_sgd_params(config.layer_sizes, config.seed)
    sgd_times, times = [], [[] for _ in k_values]

    def sgd_step(params, batch):
        _, g = objective(params, batch)
        return NetworkParams.from_flat(params.architecture,
                                       params.flatten() - config.lr * g.flatten())

    def foo_step(post, k, batch):
        noises = [pst.draw_noise(post, rng) for _ in range(k)]
        grads = [pst.gradient_parts(post, objective(pst.transform_network(post, e), batch)[1])
                 for e in noises]
        return pst.update_network(post, noises, grads)

    with threadpool_limits(limits=1):
        for n in range(iters + warmup):
            batch = batches[n % len(batches)]
            if include_sgd:
                start = time.perf_counter()
                params = sgd_step(params, batch)
                sgd_times.append(time.perf_counter() - start)
            for j, k in enumerate(k_values):
                start = time.perf_counter()
                posts[j] = foo_step(posts[j], int(k), batch)
                times[j].append(time.perf_counter() - start)
    rows = [(0, float(np.median(sgd_times[warmup:])))] if include_sgd else []
    rows += [(int(k), float(np.median(t[warmup:]))) for k, t in zip(k_values, times)]
    return rows


# -- output files ---------------------------------------------------------------

METRICS_HEADER = ["iteration", "avg_seen_acc", "first_task_acc", "num_seen", "task_acc",
                  "sigma_hist"]


def _fmt(x):
    return f"{x:.10g}"


def write_metrics_csv(records, path):
    """One row per record. ``task_acc`` and ``sigma_hist`` are ';'-joined lists.

    Wall-clock time is kept out of this file so identical seeds give identical
    bytes; see :func:`write_timing_csv`.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow([r.iteration, _fmt(r.avg_seen_acc), _fmt(r.first_task_acc),
                        len(r.task_acc), ";".join(_fmt(a) for a in r.task_acc),
                        "" if r.sigma_hist is None else ";".join(str(c) for c in r.sigma_hist)])


def write_timing_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "seconds_per_iter"])
        for r in records:
            w.writerow([r.iteration, _fmt(r.seconds_per_iter)])


def write_hist_rows(edges, counts, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["bin_left", "bin_right", "count"])
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        w.writerow([_fmt(lo), _fmt(hi), int(c)])


def write_hist_csv(edges, counts, path):
    with open(path, "w", newline="") as fh:
        write_hist_rows(edges, counts, fh)
