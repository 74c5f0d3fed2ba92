"""Run configuration: flat ``key = value`` files plus named profiles.

A config file is plain text, one ``key = value`` per line. ``#`` starts a
comment. Keys are the fields of :class:`RunConfig`. A ``profile`` key
selects a preset first, and every other key in the file overrides it
regardless of line order.
"""

import dataclasses
import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError, FooVBError
from .trainer import TrainerConfig

DATASETS = ("synth", "idx")
SCHEDULES = ("discrete", "continuous")


@dataclass
class RunConfig(TrainerConfig):
    profile: str = ""
    dataset: str = "synth"
    schedule: str = "discrete"
    num_tasks: int = 3
    iters_per_task: int = 2000
    crossfade_frac: float = 0.25
    output_dir: str = "out"
    # synthetic data
    synth_train: int = 2000
    synth_test: int = 1000
    synth_side: int = 8
    synth_noise: float = 0.25
    # IDX data
    data_dir: str = ""
    pad_side: int = 0  # 0 keeps the native side
    train_limit: int = 0  # 0 uses every example
    test_limit: int = 0
    sgd_baseline: bool = False

    def __post_init__(self):
        super().__post_init__()
        if self.dataset not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.num_tasks < 1 or self.iters_per_task < 1:
            raise ValueError("num_tasks and iters_per_task must be positive")
        if self.schedule == "continuous" and not 0.0 < self.crossfade_frac < 1.0:
            raise ValueError("crossfade_frac must lie in (0, 1)")
        side = (self.pad_side or self.synth_side) if self.dataset == "synth" else None
        if side is not None and self.layer_sizes[0] != side * side:
            raise ValueError(f"layer_sizes[0] = {self.layer_sizes[0]} but images have "
                             f"{side * side} pixels")

    def to_dict(self):
        out = asdict(self)
        out["layer_sizes"] = list(self.layer_sizes)
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(extra)}")
        return cls(**data)

    def trainer_config(self):
        keys = {f.name for f in fields(TrainerConfig)}
        return TrainerConfig(**{k: v for k, v in asdict(self).items() if k in keys})

    def to_text(self):
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"


# Twenty epochs of 60000 training images at batch 128, as an iteration budget.
_MNIST_TASK_ITERS = 9375

PROFILES = {
    "desk-small": dict(
        dataset="synth", synth_side=8, layer_sizes=(64, 32, 32, 10), num_tasks=3,
        iters_per_task=2000, schedule="discrete", variant="diagonal", k_train=10,
        sigma_init=0.047, batch_size=128, loss_reduction="sum", eval_every=500,
        output_dir="out/desk-small",
    ),
    "desk-small-continuous": dict(
        dataset="synth", synth_side=8, layer_sizes=(64, 32, 32, 10), num_tasks=3,
        iters_per_task=2000, schedule="continuous", crossfade_frac=0.25,
        variant="diagonal", k_train=10, sigma_init=0.047, batch_size=128,
        loss_reduction="sum", eval_every=500, output_dir="out/desk-small-continuous",
    ),
    "desk-small-matrix": dict(
        dataset="synth", synth_side=8, layer_sizes=(64, 32, 32, 10), num_tasks=3,
        iters_per_task=2000, schedule="discrete", variant="matrix_variate", k_train=32,
        k_eval=64, alpha=0.5, batch_size=128, loss_reduction="sum", eval_every=500,
        output_dir="out/desk-small-matrix",
    ),
    "mnist-discrete": dict(
        dataset="idx", layer_sizes=(784, 100, 100, 10), num_tasks=10,
        iters_per_task=_MNIST_TASK_ITERS, schedule="discrete", variant="diagonal",
        k_train=10, sigma_init=0.047, batch_size=128, loss_reduction="sum",
        eval_every=0, output_dir="out/mnist-discrete",
    ),
    "mnist-discrete-matrix": dict(
        dataset="idx", layer_sizes=(784, 100, 100, 10), num_tasks=10,
        iters_per_task=_MNIST_TASK_ITERS, schedule="discrete", variant="matrix_variate",
        k_train=2500, k_eval=2500, alpha=0.5, batch_size=128, loss_reduction="sum",
        eval_every=0, output_dir="out/mnist-discrete-matrix",
    ),
    "mnist-continuous": dict(
        dataset="idx", pad_side=32, layer_sizes=(1024, 200, 200, 10), num_tasks=10,
        iters_per_task=9380, schedule="continuous", crossfade_frac=0.25,
        variant="diagonal", k_train=10, sigma_init=0.06, batch_size=128,
        loss_reduction="sum", eval_every=0, output_dir="out/mnist-continuous",
    ),
    "mnist-continuous-matrix": dict(
        dataset="idx", pad_side=32, layer_sizes=(1024, 200, 200, 10), num_tasks=10,
        iters_per_task=9380, schedule="continuous", crossfade_frac=0.25,
        variant="matrix_variate", k_train=2500, k_eval=2500, alpha=0.6, batch_size=128,
        loss_reduction="sum", eval_every=0, output_dir="out/mnist-continuous-matrix",
    ),
}


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(name, text):
    default = next(f.default for f in fields(RunConfig) if f.name == name)
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(int(p) for p in text.replace(" ", "").split(",") if p)
    return text


def parse_text(text, path="<string>"):
    """Parse config text into ``{key: (value, line)}`` without applying defaults."""
    known = {f.name for f in fields(RunConfig)}
    found = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", path, lineno)
        if key in found:
            raise ConfigError(f"duplicate key {key!r}", path, lineno)
        try:
            found[key] = (_convert(key, value), lineno)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", path, lineno) from exc
    return found


def build(found, path="<string>"):
    values = {}
    if found.get("profile", ("", 0))[0]:
        name, lineno = found["profile"]
        if name not in PROFILES:
            raise ConfigError(
                f"unknown profile {name!r}; choose from {', '.join(sorted(PROFILES))}",
                path, lineno)
        values.update(PROFILES[name])
    values.update({k: v for k, (v, _) in found.items()})
    try:
        return RunConfig(**values)
    except (ValueError, TypeError, FooVBError) as exc:
        # point at the first explicit key the message mentions, else the top of the file
        line = next((ln for k, (_, ln) in found.items() if k in str(exc)), None)
        raise ConfigError(str(exc), path, line) from exc


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc.strerror}", path) from exc
    return build(parse_text(text, path), path)


def from_profile(name, **overrides):
    """RunConfig for a named profile with keyword overrides."""
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}")
    return RunConfig(**{**PROFILES[name], "profile": name, **overrides})


def load_summary_config(summary_path):
    with open(summary_path) as fh:
        return RunConfig.from_dict(json.load(fh)["config"])


def replace(cfg, **changes):
    return dataclasses.replace(cfg, **changes)
