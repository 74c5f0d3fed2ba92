"""Fully connected ReLU network with softmax cross-entropy and exact gradients."""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDataset, ShapeMismatch


@dataclass(frozen=True)
class Architecture:
    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need at least two positive layer sizes, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def shapes(self):
        """(out, in) per layer."""
        s = self.layer_sizes
        return [(s[i + 1], s[i]) for i in range(len(s) - 1)]

    @property
    def num_classes(self):
        return self.layer_sizes[-1]

    @property
    def num_params(self):
        return sum(o * (i + 1) for o, i in self.shapes)


@dataclass
class NetworkParams:
    weights: list
    biases: list

    @property
    def architecture(self):
        sizes = [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]
        return Architecture(tuple(sizes))

    @classmethod
    def zeros(cls, arch):
        return cls([np.zeros(s) for s in arch.shapes],
                   [np.zeros(s[0]) for s in arch.shapes])

    def flatten(self):
        """Concatenate, per layer, the row-major weights then the bias."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, arch, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (arch.num_params,):
            raise ShapeMismatch(f"expected {arch.num_params} parameters, got {theta.shape}")
        weights, biases, pos = [], [], 0
        for out, inp in arch.shapes:
            weights.append(theta[pos:pos + out * inp].reshape(out, inp))
            pos += out * inp
            biases.append(theta[pos:pos + out])
            pos += out
        return cls(weights, biases)

    def augmented(self):
        """Per-layer ``[W | b]`` matrices of shape out x (in + 1)."""
        return [np.hstack([w, b[:, None]]) for w, b in zip(self.weights, self.biases)]

    @classmethod
    def from_augmented(cls, mats):
        return cls([m[:, :-1] for m in mats], [m[:, -1] for m in mats])

    def copy(self):
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise ShapeMismatch(
                f"inputs {self.inputs.shape} and labels {self.labels.shape} disagree"
            )

    def __len__(self):
        return self.labels.shape[0]


def _check(params, inputs):
    if inputs.ndim != 2 or inputs.shape[1] != params.weights[0].shape[1]:
        raise ShapeMismatch(
            f"input width {inputs.shape[-1]} does not match first layer "
            f"{params.weights[0].shape}"
        )
    for w, b, nxt in zip(params.weights, params.biases, params.weights[1:] + [None]):
        if b.shape != (w.shape[0],) or (nxt is not None and nxt.shape[1] != w.shape[0]):
            raise ShapeMismatch("inconsistent layer shapes")


def _inputs_of(data):
    return data.inputs if hasattr(data, "inputs") else np.asarray(data, dtype=np.float64)


def forward(params, batch):
    """Logits for a Batch (or a raw ``b x d_in`` array)."""
    h = _inputs_of(batch)
    _check(params, h)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(params, batch, reduction="mean"):
    """Softmax cross-entropy over the batch and its exact gradient.

    ``reduction`` is ``"mean"`` or ``"sum"`` over the per-example NLL.
    """
    x, y = batch.inputs, batch.labels
    _check(params, x)
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    logp = _log_softmax(acts[-1])
    n = len(y)
    rows = np.arange(n)
    scale = 1.0 / n if reduction == "mean" else 1.0
    loss = -logp[rows, y].sum() * scale

    delta = np.exp(logp)
    delta[rows, y] -= 1.0
    delta *= scale
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(last, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            # ReLU subgradient at exactly 0 is 0
            delta = (delta @ params.weights[i]) * (acts[i] > 0.0)
    return loss, NetworkParams(gw, gb)


def accuracy(params, dataset):
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    labels = np.asarray(dataset.labels)
    if labels.size == 0:
        raise EmptyDataset("accuracy of an empty dataset")
    pred = np.argmax(forward(params, dataset), axis=1)
    return float(np.mean(pred == labels))
