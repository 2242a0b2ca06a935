"""Quantization-aware training of desk-scale MLPs.

Mini-batch SGD on softmax cross-entropy in float64.  Forward passes see the
weights quantized to the low storage format; gradients flow through the
quantization as identity (straight-through estimator).  Biases train in
wide precision and are quantized once at export.  Activations are not
quantized during training; only inference emulates reduced precision.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .activations import ActivationKind, activation_derivative, activation_value
from .linalg import Matrix
from .network import Layer, Network
from .precision import FP8_E4M3, FP16, FloatFormat, quantize

__all__ = ["TrainConfig", "EpochStats", "TrainingDivergedError", "train"]


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 4
    batch_size: int = 128
    seed: int = 0
    weight_decay: float = 0.0
    hidden_bias_init: float = 0.0
    output_bias_init: float = 1.0  # keeps final-layer ReLU logits alive

    def as_metadata(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _init_parameters(rng, dims, activation, config):
    weights, biases = [], []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        gain = 2.0 if activation is ActivationKind.RELU else 1.0
        weights.append(rng.normal(0.0, np.sqrt(gain / d_in), size=(d_out, d_in)))
        b = np.zeros(d_out)
        if activation is ActivationKind.RELU:
            # the output bias keeps final-layer logits alive under ReLU; the
            # hidden bias controls how sparse the activations start out
            b += (config.output_bias_init if i == len(dims) - 2
                  else config.hidden_bias_init)
        biases.append(b)
    return weights, biases


def train(
    dataset,
    dims,
    activation: ActivationKind,
    config: TrainConfig = TrainConfig(),
    low: FloatFormat = FP8_E4M3,
    high: FloatFormat = FP16,
) -> tuple[Network, list[EpochStats]]:
    """QAT a classifier; returns the quantized network and the epoch log.

    The training forward applies the activation on every layer, including
    the last, exactly as inference does.
    """
    X = np.asarray(dataset.images, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("dataset is empty")
    dims = list(dims)
    if dims[0] != X.shape[1]:
        raise ValueError(f"dims[0]={dims[0]} but inputs have {X.shape[1]} features")
    n_classes = dims[-1]
    if y.max() >= n_classes:
        raise ValueError("labels exceed the output dimension")

    rng = np.random.default_rng(config.seed)
    weights, biases = _init_parameters(rng, dims, activation, config)
    onehot = np.eye(n_classes)[y]

    history: list[EpochStats] = []
    n = len(X)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = X[idx], onehot[idx]

            # forward with quantized weights (straight-through estimator)
            wq = [quantize(w, low) for w in weights]
            acts = [xb]
            pre = []
            for w, b in zip(wq, biases):
                z = acts[-1] @ w.T + b
                pre.append(z)
                acts.append(activation_value(z, activation))
            probs = _softmax(acts[-1])
            loss = -np.mean(np.sum(yb * np.log(probs + 1e-300), axis=1))
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss!r} at epoch {epoch}, batch {start // config.batch_size}"
                )
            epoch_loss += loss * len(idx)
            epoch_correct += int(np.sum(np.argmax(probs, axis=1) == y[idx]))

            # backward; gradients w.r.t. quantized weights are applied to
            # the wide master copies unchanged
            delta = (probs - yb) / len(idx)
            delta = delta * activation_derivative(pre[-1], activation)
            for layer in range(len(weights) - 1, -1, -1):
                gw = delta.T @ acts[layer]
                if config.weight_decay:
                    gw = gw + config.weight_decay * weights[layer]
                gb = delta.sum(axis=0)
                if layer > 0:
                    delta = (delta @ wq[layer]) * activation_derivative(
                        pre[layer - 1], activation
                    )
                weights[layer] -= config.learning_rate * gw
                biases[layer] -= config.learning_rate * gb

        history.append(
            EpochStats(epoch=epoch, loss=epoch_loss / n, accuracy=epoch_correct / n)
        )

    layers = []
    for w, b in zip(weights, biases):
        aug = np.concatenate([quantize(w, low), quantize(b, low)[:, None]], axis=1)
        layers.append(Layer(Matrix(aug, low), activation))
    return Network(tuple(layers), low, high), history
