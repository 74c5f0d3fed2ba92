"""Datasets and task-agnostic permuted-task streams.

The trainer only ever sees :class:`~foovb.model.Batch` objects drawn by
:class:`TaskStream`; task identity stays inside the schedule and the
evaluation sets.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, CountMismatch, ShrinkNotAllowed, TruncatedFile
from .model import Batch

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "FOOVB_DATA_DIR"


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    side: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or self.images.shape[0] < 1:
            raise ValueError("dataset needs at least one flattened image")
        if self.labels.shape != (self.images.shape[0],):
            raise CountMismatch(f"{self.images.shape[0]} images vs {self.labels.shape} labels")
        if self.images.shape[1] != self.side * self.side:
            raise ValueError(f"image width {self.images.shape[1]} is not {self.side}^2")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError("pixels must lie in [0, 1]")

    @property
    def inputs(self):
        return self.images

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.side)


# -- IDX files ----------------------------------------------------------------

def _read_idx(path, magic, ndims):
    with open(path, "rb") as fh:
        raw = fh.read()
    header = 4 + 4 * ndims
    if len(raw) < header:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, header needs {header}")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagic(f"{path}: magic {found:#010x}, expected {magic:#010x}")
    dims = struct.unpack(f">{ndims}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise TruncatedFile(f"{path}: payload has {len(raw) - header} bytes, need {count}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return data.reshape(dims)


def load_idx(images_path, labels_path):
    """Parse an IDX image/label pair; pixels are scaled by 1/255."""
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    n, rows, cols = images.shape
    if rows != cols:
        raise ValueError(f"non-square images {rows}x{cols}")
    return Dataset(images.reshape(n, rows * cols) / 255.0, labels.astype(np.int64), rows)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 ``images`` (n x rows x cols) and ``labels`` as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def mnist_paths(data_dir=None, split="train"):
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise FileNotFoundError(f"no data directory given and {DATA_DIR_ENV} is unset")
    prefix = "train" if split == "train" else "t10k"
    return (os.path.join(data_dir, f"{prefix}-images-idx3-ubyte"),
            os.path.join(data_dir, f"{prefix}-labels-idx1-ubyte"))


def pad_to(dataset, side):
    """Centered zero padding up to ``side x side``."""
    if side < dataset.side:
        raise ShrinkNotAllowed(f"cannot pad side {dataset.side} down to {side}")
    if side == dataset.side:
        return dataset
    total = side - dataset.side
    lo = total // 2
    imgs = dataset.images.reshape(-1, dataset.side, dataset.side)
    padded = np.pad(imgs, ((0, 0), (lo, total - lo), (lo, total - lo)))
    return Dataset(padded.reshape(len(dataset), side * side), dataset.labels, side)


def synth_dataset(n, side, classes, seed, noise=0.25, proto_scale=0.25, window=None):
    """Gaussian class prototypes plus pixel noise, clipped to [0, 1].

    Like handwritten digits, only a centered ``window x window`` patch carries
    signal (default ``side // 2``, at least 2); the border stays exactly zero.
    Labels are assigned round-robin so classes are balanced to within one.
    """
    rng = np.random.default_rng(seed)
    window = max(2, side // 2) if window is None else min(int(window), side)
    lo = (side - window) // 2
    mask = np.zeros((side, side), dtype=bool)
    mask[lo:lo + window, lo:lo + window] = True
    active = np.flatnonzero(mask)
    protos = np.clip(0.5 + proto_scale * rng.standard_normal((classes, active.size)), 0.0, 1.0)
    labels = np.arange(n) % classes
    images = np.zeros((n, side * side))
    images[:, active] = np.clip(
        protos[labels] + noise * rng.standard_normal((n, active.size)), 0.0, 1.0)
    return Dataset(images, labels, side)


# -- tasks and schedules ----------------------------------------------------------

@dataclass(frozen=True)
class TaskDef:
    task_id: int
    permutation: np.ndarray
    seed: int

    def apply(self, images):
        return np.asarray(images)[..., self.permutation]

    def invert(self, images):
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(self.permutation.size)
        return np.asarray(images)[..., inv]


def make_task(task_id, d, seed=0):
    """Pixel permutation for ``task_id``; task 0 is the identity."""
    if task_id == 0:
        perm = np.arange(d)
    else:
        rng = np.random.default_rng([seed, task_id])
        perm = rng.permutation(d)
    return TaskDef(int(task_id), perm, int(seed))


def permuted_testsets(dataset, tasks):
    """One pure (unmixed) permuted copy of ``dataset`` per task."""
    return [Batch(t.apply(dataset.images), dataset.labels) for t in tasks]


class MixtureSchedule:
    """Piecewise-linear task probabilities over iterations."""

    def __init__(self, num_tasks, iters_per_task, crossfade_frac=0.0):
        if num_tasks < 1 or iters_per_task < 1:
            raise ValueError("num_tasks and iters_per_task must be positive")
        if not 0.0 <= crossfade_frac < 1.0:
            raise ValueError("crossfade_frac must lie in [0, 1)")
        self.num_tasks = int(num_tasks)
        self.iters_per_task = int(iters_per_task)
        self.crossfade_frac = float(crossfade_frac)

    @property
    def total_iters(self):
        return self.num_tasks * self.iters_per_task

    def probs(self, iteration):
        p = np.zeros(self.num_tasks)
        ipt = self.iters_per_task
        width = self.crossfade_frac * ipt
        nearest = int(round(iteration / ipt))
        if width > 0 and 1 <= nearest < self.num_tasks:
            start = nearest * ipt - 0.5 * width
            if start <= iteration <= start + width:
                frac = (iteration - start) / width
                p[nearest - 1] = 1.0 - frac
                p[nearest] = frac
                return p
        p[min(max(int(iteration // ipt), 0), self.num_tasks - 1)] = 1.0
        return p

    def first_iteration(self, task):
        """First iteration at which ``task`` has nonzero probability."""
        if task == 0:
            return 0
        start = task * self.iters_per_task - 0.5 * self.crossfade_frac * self.iters_per_task
        return int(np.floor(start)) + 1 if self.crossfade_frac > 0 else task * self.iters_per_task


def discrete_schedule(num_tasks, iters_per_task):
    return MixtureSchedule(num_tasks, iters_per_task, 0.0)


def continuous_schedule(num_tasks, iters_per_task, crossfade_frac=0.25):
    if not 0.0 < crossfade_frac < 1.0:
        raise ValueError("crossfade_frac must lie in (0, 1)")
    return MixtureSchedule(num_tasks, iters_per_task, crossfade_frac)


def next_batch(dataset, tasks, schedule, iteration, batch_size, rng):
    """Draw a task per slot from the schedule, an example with replacement, then permute."""
    p = schedule.probs(iteration)
    task_idx = rng.choice(len(tasks), size=batch_size, p=p)
    example_idx = rng.integers(0, len(dataset), size=batch_size)
    images = dataset.images[example_idx]
    out = np.empty_like(images)
    for t in np.unique(task_idx):
        sel = task_idx == t
        out[sel] = tasks[t].apply(images[sel])
    return Batch(out, dataset.labels[example_idx])


class TaskStream:
    """Boundary-free batch source: yields only inputs and labels."""

    def __init__(self, dataset, tasks, schedule, batch_size, seed):
        self._dataset = dataset
        self._tasks = tasks
        self._schedule = schedule
        self.batch_size = int(batch_size)
        self._rng = np.random.default_rng([int(seed), 1])

    @property
    def total_iters(self):
        return self._schedule.total_iters

    def batch(self, iteration):
        return next_batch(self._dataset, self._tasks, self._schedule, iteration,
                          self.batch_size, self._rng)
