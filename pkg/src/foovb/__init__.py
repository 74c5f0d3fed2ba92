"""Fixed-point online variational Bayes for task-agnostic continual learning."""

__version__ = "0.1.0"

from .config import RunConfig, load_config  # noqa: E402
from .model import Architecture, Batch, NetworkParams  # noqa: E402
from .posterior import (  # noqa: E402
    DiagonalPosterior,
    FullPosterior,
    MatrixVariatePosterior,
    NetworkPosterior,
    init_network,
)
from .trainer import TrainerConfig, evaluate, train, train_sgd_baseline  # noqa: E402

__all__ = [
    "Architecture", "Batch", "DiagonalPosterior", "FullPosterior", "MatrixVariatePosterior",
    "NetworkParams", "NetworkPosterior", "RunConfig", "TrainerConfig", "evaluate",
    "init_network", "load_config", "train", "train_sgd_baseline",
]
